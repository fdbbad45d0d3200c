#![allow(dead_code)]

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Random `n x k` matrix with orthonormal columns (Gram–Schmidt on uniform draws).
pub fn orthonormal(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
    let mut q = uniform(rng, n, k);
    for j in 0..k {
        for _ in 0..2 {
            for i in 0..j {
                let proj = q.column(i).dot(&q.column(j));
                let qi = q.column(i).into_owned();
                q.column_mut(j).axpy(-proj, &qi, 1.0);
            }
        }
        let norm = q.column(j).norm();
        q.column_mut(j).scale_mut(1.0 / norm);
    }
    q
}

/// Symmetric matrix with eigenvalues drawn uniformly from `[lo, hi]`.
pub fn spd(rng: &mut ChaCha8Rng, r: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = orthonormal(rng, r, r);
    let d = DMatrix::from_diagonal(&DVector::from_fn(r, |_, _| rng.random_range(lo..hi)));
    let m = &q * d * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Real matrix with eigenvalue moduli in `[lo, hi]`: 2x2 rotation blocks plus
/// one real eigenvalue for odd sizes, in a random orthonormal basis.
pub fn stable_matrix(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    stable_matrix_with_spectrum(rng, n, lo, hi).0
}

/// As [`stable_matrix`], also returning the eigenvalues it was built from.
pub fn stable_matrix_with_spectrum(
    rng: &mut ChaCha8Rng,
    n: usize,
    lo: f64,
    hi: f64,
) -> (DMatrix<f64>, Vec<Complex<f64>>) {
    let mut block = DMatrix::zeros(n, n);
    let mut spectrum = Vec::with_capacity(n);
    let mut i = 0;
    while i + 1 < n {
        let rho = rng.random_range(lo..hi);
        let theta: f64 = rng.random_range(0.2..2.8);
        block[(i, i)] = rho * theta.cos();
        block[(i, i + 1)] = -rho * theta.sin();
        block[(i + 1, i)] = rho * theta.sin();
        block[(i + 1, i + 1)] = rho * theta.cos();
        spectrum.push(Complex::from_polar(rho, theta));
        spectrum.push(Complex::from_polar(rho, -theta));
        i += 2;
    }
    if i < n {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        block[(i, i)] = sign * rng.random_range(lo..hi);
        spectrum.push(Complex::new(block[(i, i)], 0.0));
    }
    let q = orthonormal(rng, n, n);
    (&q * block * q.transpose(), spectrum)
}

/// `x_{k+1} = A x_k + B u_k`, `y_k = E x_k + D u_k`, column 0 from `x0`.
pub fn simulate_lti(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    e: &DMatrix<f64>,
    d: Option<&DMatrix<f64>>,
    x0: &DVector<f64>,
    u: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = u.ncols();
    let mut xs = DMatrix::zeros(a.nrows(), k);
    let mut ys = DMatrix::zeros(e.nrows(), k);
    let mut x = x0.clone();
    for j in 0..k {
        xs.set_column(j, &x);
        let mut y = e * &x;
        if let Some(d) = d {
            y += d * u.column(j);
        }
        ys.set_column(j, &y);
        x = a * &x + b * u.column(j);
    }
    (xs, ys)
}

/// Smooth multi-sine input `m x k` on the grid `t_j = j·dt`.
pub fn multisine(rng: &mut ChaCha8Rng, m: usize, k: usize, dt: f64, terms: usize) -> DMatrix<f64> {
    let params: Vec<Vec<(f64, f64, f64)>> = (0..m)
        .map(|_| {
            (0..terms)
                .map(|_| {
                    (
                        rng.random_range(0.2..1.0),
                        rng.random_range(0.3..6.0),
                        rng.random_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect()
        })
        .collect();
    DMatrix::from_fn(m, k, |i, j| {
        let t = j as f64 * dt;
        params[i].iter().map(|(a, w, ph)| a * (w * t + ph).sin()).sum()
    })
}

/// Classical RK4 for `q̈ = B u(t) − C q̇ − K q` with a closure input.
pub fn rk4_second_order<F: Fn(f64) -> DVector<f64>>(
    k_mat: &DMatrix<f64>,
    c_mat: &DMatrix<f64>,
    b_mat: &DMatrix<f64>,
    input: F,
    q0: &DVector<f64>,
    v0: &DVector<f64>,
    dt: f64,
    steps: usize,
    substeps: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let r = q0.len();
    let accel = |t: f64, q: &DVector<f64>, v: &DVector<f64>| b_mat * input(t) - c_mat * v - k_mat * q;
    let mut qs = DMatrix::zeros(r, steps);
    let mut vs = DMatrix::zeros(r, steps);
    let (mut q, mut v) = (q0.clone(), v0.clone());
    let h = dt / substeps as f64;
    for j in 0..steps {
        qs.set_column(j, &q);
        vs.set_column(j, &v);
        for s in 0..substeps {
            let t = j as f64 * dt + s as f64 * h;
            let k1q = v.clone();
            let k1v = accel(t, &q, &v);
            let k2q = &v + &k1v * (h / 2.0);
            let k2v = accel(t + h / 2.0, &(&q + &k1q * (h / 2.0)), &k2q);
            let k3q = &v + &k2v * (h / 2.0);
            let k3v = accel(t + h / 2.0, &(&q + &k2q * (h / 2.0)), &k3q);
            let k4q = &v + &k3v * h;
            let k4v = accel(t + h, &(&q + &k3q * h), &k4q);
            q += (k1q + &k2q * 2.0 + &k3q * 2.0 + k4q) * (h / 6.0);
            v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
        }
    }
    (qs, vs)
}

pub fn rel_fro(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn min_sym_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

pub fn hcat2(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Exact sampled solution of `q̈ + C q̇ + K q = B u` with `u` held constant
/// over each step, via the matrix exponential of the augmented system.
pub fn zoh_second_order(
    k_mat: &DMatrix<f64>,
    c_mat: &DMatrix<f64>,
    b_mat: &DMatrix<f64>,
    q0: &DVector<f64>,
    v0: &DVector<f64>,
    u: &DMatrix<f64>,
    dt: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (r, m) = b_mat.shape();
    let n = 2 * r + m;
    let mut aug = DMatrix::zeros(n, n);
    aug.view_mut((0, r), (r, r)).fill_with_identity();
    aug.view_mut((r, 0), (r, r)).copy_from(&(-k_mat));
    aug.view_mut((r, r), (r, r)).copy_from(&(-c_mat));
    aug.view_mut((r, 2 * r), (r, m)).copy_from(b_mat);
    // exp([[A, B], [0, 0]] dt) = [[Φ, Γ], [0, I]]
    let big = (aug * dt).exp();
    let phi = big.view((0, 0), (2 * r, 2 * r)).into_owned();
    let gamma = big.view((0, 2 * r), (2 * r, m)).into_owned();
    let mut x = DVector::zeros(2 * r);
    x.rows_mut(0, r).copy_from(q0);
    x.rows_mut(r, r).copy_from(v0);
    let mut qs = DMatrix::zeros(r, u.ncols());
    let mut vs = DMatrix::zeros(r, u.ncols());
    for j in 0..u.ncols() {
        qs.set_column(j, &x.rows(0, r));
        vs.set_column(j, &x.rows(r, r));
        x = &phi * &x + &gamma * u.column(j);
    }
    (qs, vs)
}

/// Piecewise-constant uniform input redrawn every `hold` steps.
pub fn held_input(rng: &mut ChaCha8Rng, m: usize, k: usize, hold: usize) -> DMatrix<f64> {
    let levels = uniform(rng, m, k / hold + 1);
    DMatrix::from_fn(m, k, |i, j| levels[(i, j / hold)])
}
