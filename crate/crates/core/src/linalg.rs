//! Dense linear-algebra helpers shared by the learners.

use std::sync::Once;

use nalgebra::{Complex, DMatrix, DVector};

static SEQUENTIAL: Once = Once::new();

/// Thin singular value decomposition `a = u * diag(s) * vᵀ` with `s` sorted
/// in nonincreasing order. `u` is `rows x k`, `v` is `cols x k` where
/// `k = min(rows, cols)`.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl ThinSvd {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let (rows, cols) = a.shape();
        if rows == 0 || cols == 0 {
            return ThinSvd {
                u: DMatrix::zeros(rows, 0),
                s: DVector::zeros(0),
                v: DMatrix::zeros(cols, 0),
            };
        }
        // Sequential kernels keep results bitwise independent of thread count.
        SEQUENTIAL.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
        let k = rows.min(cols);
        let m = faer::Mat::<f64>::from_fn(rows, cols, |i, j| a[(i, j)]);
        if let Ok(svd) = m.thin_svd() {
            let (fu, fs, fv) = (svd.U(), svd.S(), svd.V());
            let u = DMatrix::from_fn(rows, k, |i, j| fu[(i, j)]);
            let s = DVector::from_fn(k, |i, _| fs[i]);
            let v = DMatrix::from_fn(cols, k, |i, j| fv[(i, j)]);
            if all_finite(&u) && s.iter().all(|x| x.is_finite()) && all_finite(&v) {
                return sorted(u, s, v);
            }
        }
        // faer can report success with NaN factors on exactly rank-deficient
        // input (seen with many zero singular values); use nalgebra instead.
        if a.iter().all(|x| x.is_finite()) {
            if let Some(svd) = a.clone().try_svd(true, true, f64::EPSILON, 10_000) {
                if let (Some(u), Some(v_t)) = (svd.u, svd.v_t) {
                    return sorted(u, svd.singular_values, v_t.transpose());
                }
            }
        }
        ThinSvd {
            u: DMatrix::from_element(rows, k, f64::NAN),
            s: DVector::from_element(k, f64::NAN),
            v: DMatrix::from_element(cols, k, f64::NAN),
        }
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Number of singular values above `rcond * s[0]`.
    pub fn numerical_rank(&self, rcond: f64) -> usize {
        match self.s.iter().next() {
            Some(&s0) if s0 > 0.0 => self.s.iter().filter(|&&x| x > rcond * s0).count(),
            _ => 0,
        }
    }
}

fn sorted(u: DMatrix<f64>, s: DVector<f64>, v: DMatrix<f64>) -> ThinSvd {
    let k = s.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap_or(std::cmp::Ordering::Equal));
    if order.iter().enumerate().all(|(i, &j)| i == j) {
        return ThinSvd { u, s, v };
    }
    let u_sorted = DMatrix::from_fn(u.nrows(), k, |i, j| u[(i, order[j])]);
    let v_sorted = DMatrix::from_fn(v.nrows(), k, |i, j| v[(i, order[j])]);
    let s_sorted = DVector::from_fn(k, |i, _| s[order[i]]);
    ThinSvd {
        u: u_sorted,
        s: s_sorted,
        v: v_sorted,
    }
}

/// Flip column signs so that each column's largest-magnitude entry is
/// positive (first such index on ties). Applies the same flips to `partner`
/// columns when given, keeping a factorization intact.
pub fn fix_column_signs(m: &mut DMatrix<f64>, mut partner: Option<&mut DMatrix<f64>>) {
    for j in 0..m.ncols() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for i in 0..m.nrows() {
            let a = m[(i, j)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if m.nrows() > 0 && m[(best, j)] < 0.0 {
            m.column_mut(j).neg_mut();
            if let Some(p) = partner.as_deref_mut() {
                p.column_mut(j).neg_mut();
            }
        }
    }
}

/// Minimum-norm solution of `min ‖y − x z‖_F` over `x`, with singular values
/// of `z` below `rcond · σ_max` discarded. Returns the solution and the
/// numerical rank used.
pub fn solve_right(y: &DMatrix<f64>, z: &DMatrix<f64>, rcond: f64) -> (DMatrix<f64>, usize) {
    let svd = ThinSvd::new(z);
    solve_right_with(y, &svd, rcond)
}

/// As [`solve_right`] with a precomputed decomposition of `z`.
pub fn solve_right_with(y: &DMatrix<f64>, svd: &ThinSvd, rcond: f64) -> (DMatrix<f64>, usize) {
    let rank = svd.numerical_rank(rcond);
    let u = svd.u.columns(0, rank);
    let v = svd.v.columns(0, rank);
    // x = y V S⁻¹ Uᵀ
    let mut yv = y * v;
    for j in 0..rank {
        let inv = 1.0 / svd.s[j];
        yv.column_mut(j).scale_mut(inv);
    }
    (yv * u.transpose(), rank)
}

/// Project onto `{X = Xᵀ, λ_min(X) ≥ floor}`: symmetrize, then clip
/// eigenvalues. Returns the projection and whether any eigenvalue was clipped.
pub fn project_spd(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, bool) {
    let sym = symmetrize(m);
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return (sym, false);
    }
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let rebuilt =
        &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (symmetrize(&rebuilt), true)
}

/// `(m + mᵀ)/2`, exactly symmetric in floating point.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

pub fn min_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    sym.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    sym.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.clone().complex_eigenvalues().iter().cloned().collect()
}

/// Largest distance between two eigenvalue multisets after greedy
/// nearest-neighbour pairing. Returns infinity on a size mismatch.
pub fn spectrum_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut pool: Vec<Complex<f64>> = b.to_vec();
    let mut worst: f64 = 0.0;
    let mut sorted_a = a.to_vec();
    sorted_a.sort_by(|x, y| y.norm().partial_cmp(&x.norm()).unwrap());
    for x in sorted_a {
        let (idx, d) = pool
            .iter()
            .enumerate()
            .map(|(i, y)| (i, (x - y).norm()))
            .min_by(|p, q| p.1.partial_cmp(&q.1).unwrap())
            .unwrap();
        worst = worst.max(d);
        pool.swap_remove(idx);
    }
    worst
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Horizontal concatenation of equally tall blocks.
pub fn hcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hcat: row mismatch");
        out.columns_mut(c, b.ncols()).copy_from(*b);
        c += b.ncols();
    }
    out
}

/// Vertical concatenation of equally wide blocks.
pub fn vcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vcat: column mismatch");
        out.rows_mut(r, b.nrows()).copy_from(*b);
        r += b.nrows();
    }
    out
}
