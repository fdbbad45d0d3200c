//! Synthetic full-order model: a fixed-fixed chain of point masses joined by
//! springs with a quartic (hardening) inter-node potential,
//!
//! ```text
//! M q̈ + C q̇ + ∂U/∂q(q) = B u(t),    y = E q,
//! U(q) = ½ qᵀ K_lin q + (κ/4) Σ_i (q_{i+1} − q_i)⁴,    q_0 = q_{n+1} = 0,
//! ```
//!
//! with Rayleigh damping `C = αM + βK_lin`. Trajectories are produced with
//! implicit Euler on the first-order form and a Newton solve per step.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Result, RomError};

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITERS: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FomConfig {
    pub n_nodes: usize,
    pub mass_per_node: f64,
    pub linear_stiffness: f64,
    pub cubic_stiffness: f64,
    pub rayleigh_alpha: f64,
    pub rayleigh_beta: f64,
    pub input_nodes: Vec<usize>,
    pub output_nodes: Vec<usize>,
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
}

impl Default for FomConfig {
    fn default() -> Self {
        let n_nodes = 150;
        FomConfig {
            n_nodes,
            mass_per_node: 0.01,
            linear_stiffness: 500.0,
            cubic_stiffness: 2.0e3,
            rayleigh_alpha: 0.2,
            rayleigh_beta: 1.0e-4,
            input_nodes: evenly_spaced_nodes(n_nodes, 6),
            output_nodes: evenly_spaced_nodes(n_nodes, 40),
            dt: 1.0e-3,
            n_steps: 2000,
            seed: 0,
        }
    }
}

/// `count` distinct node indices spread evenly over the interior of a chain.
pub fn evenly_spaced_nodes(n_nodes: usize, count: usize) -> Vec<usize> {
    (0..count)
        .map(|i| ((i as f64 + 0.5) * n_nodes as f64 / count as f64).floor() as usize)
        .map(|i| i.min(n_nodes.saturating_sub(1)))
        .collect()
}

impl FomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(RomError::InvalidConfig(msg));
        if self.n_nodes == 0 {
            return bad("n_nodes must be positive".into());
        }
        for (name, v) in [
            ("mass_per_node", self.mass_per_node),
            ("linear_stiffness", self.linear_stiffness),
            ("dt", self.dt),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("cubic_stiffness", self.cubic_stiffness),
            ("rayleigh_alpha", self.rayleigh_alpha),
            ("rayleigh_beta", self.rayleigh_beta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be nonnegative, got {v}"));
            }
        }
        if self.n_steps < 2 {
            return bad(format!("n_steps must be at least 2, got {}", self.n_steps));
        }
        check_nodes("input_nodes", &self.input_nodes, self.n_nodes)?;
        check_nodes("output_nodes", &self.output_nodes, self.n_nodes)?;
        Ok(())
    }
}

fn check_nodes(name: &str, nodes: &[usize], n: usize) -> Result<()> {
    if nodes.is_empty() {
        return Err(RomError::InvalidConfig(format!("{name} is empty")));
    }
    for (i, &a) in nodes.iter().enumerate() {
        if a >= n {
            return Err(RomError::InvalidConfig(format!(
                "{name}[{i}] = {a} out of range for {n} nodes"
            )));
        }
        if nodes[..i].contains(&a) {
            return Err(RomError::InvalidConfig(format!("{name} repeats node {a}")));
        }
    }
    Ok(())
}

/// Symmetric-or-not tridiagonal matrix stored by its three bands.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        let off = n.saturating_sub(1);
        Tridiagonal {
            lower: vec![0.0; off],
            diag: vec![0.0; n],
            upper: vec![0.0; off],
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        DVector::from_fn(n, |i, _| {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.lower[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.upper[i] * x[i + 1];
            }
            s
        })
    }

    /// `a·self + b·other`
    pub fn axpby(&self, a: f64, other: &Tridiagonal, b: f64) -> Tridiagonal {
        let comb = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect();
        Tridiagonal {
            lower: comb(&self.lower, &other.lower),
            diag: comb(&self.diag, &other.diag),
            upper: comb(&self.upper, &other.upper),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i + 1, i)] = self.lower[i];
                m[(i, i + 1)] = self.upper[i];
            }
        }
        m
    }

    /// Thomas algorithm. Returns `None` on a zero pivot.
    pub fn solve(&self, rhs: &DVector<f64>) -> Option<DVector<f64>> {
        let n = self.dim();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut denom = self.diag[0];
        if denom == 0.0 {
            return None;
        }
        if n > 1 {
            c[0] = self.upper[0] / denom;
        }
        d[0] = rhs[0] / denom;
        for i in 1..n {
            denom = self.diag[i] - self.lower[i - 1] * c[i - 1];
            if denom == 0.0 {
                return None;
            }
            if i + 1 < n {
                c[i] = self.upper[i] / denom;
            }
            d[i] = (rhs[i] - self.lower[i - 1] * d[i - 1]) / denom;
        }
        let mut x = DVector::zeros(n);
        x[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = d[i] - c[i] * x[i + 1];
        }
        Some(x)
    }
}

/// Assembled full-order operators.
#[derive(Debug, Clone)]
pub struct FomSystem {
    pub config: FomConfig,
    /// Lumped (diagonal) mass.
    pub mass: DVector<f64>,
    pub stiffness: Tridiagonal,
    pub damping: Tridiagonal,
}

pub fn build_fom(config: &FomConfig) -> Result<FomSystem> {
    config.validate()?;
    let n = config.n_nodes;
    let k = config.linear_stiffness;
    let mut stiffness = Tridiagonal::zeros(n);
    stiffness.diag.iter_mut().for_each(|d| *d = 2.0 * k);
    stiffness.lower.iter_mut().for_each(|d| *d = -k);
    stiffness.upper.iter_mut().for_each(|d| *d = -k);
    let mass = DVector::from_element(n, config.mass_per_node);
    let mut mass_tri = Tridiagonal::zeros(n);
    mass_tri.diag.copy_from_slice(mass.as_slice());
    let damping = mass_tri.axpby(config.rayleigh_alpha, &stiffness, config.rayleigh_beta);
    Ok(FomSystem {
        config: config.clone(),
        mass,
        stiffness,
        damping,
    })
}

impl FomSystem {
    pub fn n(&self) -> usize {
        self.config.n_nodes
    }

    pub fn m(&self) -> usize {
        self.config.input_nodes.len()
    }

    pub fn p(&self) -> usize {
        self.config.output_nodes.len()
    }

    pub fn mass_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.mass)
    }

    pub fn stiffness_matrix(&self) -> DMatrix<f64> {
        self.stiffness.to_dense()
    }

    pub fn damping_matrix(&self) -> DMatrix<f64> {
        self.damping.to_dense()
    }

    /// Selector `B` (n×m) placing each input on its node.
    pub fn input_matrix(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.n(), self.m());
        for (j, &node) in self.config.input_nodes.iter().enumerate() {
            b[(node, j)] = 1.0;
        }
        b
    }

    /// Selector `E` (p×n) reading the displacement of each output node.
    pub fn output_matrix(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.p(), self.n());
        for (i, &node) in self.config.output_nodes.iter().enumerate() {
            e[(i, node)] = 1.0;
        }
        e
    }

    pub fn apply_input(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut f = DVector::zeros(self.n());
        for (j, &node) in self.config.input_nodes.iter().enumerate() {
            f[node] += u[j];
        }
        f
    }

    pub fn observe(&self, q: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.p(), self.config.output_nodes.iter().map(|&i| q[i]))
    }

    // Spring elongations including the two wall springs: length n + 1.
    fn elongations(&self, q: &DVector<f64>) -> Vec<f64> {
        let n = self.n();
        (0..=n)
            .map(|s| {
                let right = if s < n { q[s] } else { 0.0 };
                let left = if s > 0 { q[s - 1] } else { 0.0 };
                right - left
            })
            .collect()
    }

    /// Potential energy `U(q)`.
    pub fn potential(&self, q: &DVector<f64>) -> f64 {
        let quadratic = 0.5 * q.dot(&self.stiffness.mul_vec(q));
        let kappa = self.config.cubic_stiffness;
        let quartic: f64 = self.elongations(q).iter().map(|d| d.powi(4)).sum();
        quadratic + 0.25 * kappa * quartic
    }

    /// Internal force `∂U/∂q`.
    pub fn potential_gradient(&self, q: &DVector<f64>) -> DVector<f64> {
        let mut g = self.stiffness.mul_vec(q);
        let kappa = self.config.cubic_stiffness;
        if kappa != 0.0 {
            let e = self.elongations(q);
            for i in 0..self.n() {
                // node i sits between springs i (left) and i + 1 (right)
                g[i] += kappa * (e[i].powi(3) - e[i + 1].powi(3));
            }
        }
        g
    }

    /// Tangent stiffness `∂²U/∂q²`.
    pub fn tangent_stiffness(&self, q: &DVector<f64>) -> Tridiagonal {
        let mut t = self.stiffness.clone();
        let kappa = self.config.cubic_stiffness;
        if kappa != 0.0 {
            let e = self.elongations(q);
            let n = self.n();
            for i in 0..n {
                t.diag[i] += 3.0 * kappa * (e[i] * e[i] + e[i + 1] * e[i + 1]);
                if i + 1 < n {
                    let c = 3.0 * kappa * e[i + 1] * e[i + 1];
                    t.lower[i] -= c;
                    t.upper[i] -= c;
                }
            }
        }
        t
    }

    pub fn kinetic_plus_linear_energy(&self, q: &DVector<f64>, v: &DVector<f64>) -> f64 {
        0.5 * v.component_mul(&self.mass).dot(v) + 0.5 * q.dot(&self.stiffness.mul_vec(q))
    }
}

/// Source of the input vector applied over step `k` (from `t_k` to `t_{k+1}`).
pub trait InputSignal {
    fn input_at(&self, k: usize, t: f64) -> DVector<f64>;
}

impl InputSignal for DMatrix<f64> {
    fn input_at(&self, k: usize, _t: f64) -> DVector<f64> {
        self.column(k).into_owned()
    }
}

impl<F> InputSignal for F
where
    F: Fn(f64) -> DVector<f64>,
{
    fn input_at(&self, _k: usize, t: f64) -> DVector<f64> {
        self(t)
    }
}

/// Snapshot matrices of one episode; column `k` is the state at `t[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub q: DMatrix<f64>,
    pub qdot: Option<DMatrix<f64>>,
    pub u: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub t: Vec<f64>,
    pub dt: f64,
    pub episode_id: String,
}

impl SnapshotSet {
    /// Builds and validates a snapshot set on the grid `t0 + k·dt`.
    pub fn new(
        q: DMatrix<f64>,
        qdot: Option<DMatrix<f64>>,
        u: DMatrix<f64>,
        y: DMatrix<f64>,
        t0: f64,
        dt: f64,
        episode_id: impl Into<String>,
    ) -> Result<Self> {
        let k = q.ncols();
        let t = (0..k).map(|i| t0 + i as f64 * dt).collect();
        let set = SnapshotSet {
            q,
            qdot,
            u,
            y,
            t,
            dt,
            episode_id: episode_id.into(),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.q.ncols();
        if k < 2 {
            return Err(RomError::TooFewSnapshots { needed: 2, got: k });
        }
        if !(self.dt > 0.0) {
            return Err(RomError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.u.ncols() != k {
            return Err(shape_mismatch("SnapshotSet U", (self.u.nrows(), k), self.u.shape()));
        }
        if self.y.ncols() != k {
            return Err(shape_mismatch("SnapshotSet Y", (self.y.nrows(), k), self.y.shape()));
        }
        if let Some(qd) = &self.qdot {
            if qd.shape() != self.q.shape() {
                return Err(shape_mismatch("SnapshotSet Qdot", self.q.shape(), qd.shape()));
            }
        }
        if self.t.len() != k {
            return Err(shape_mismatch("SnapshotSet t", (k, 1), (self.t.len(), 1)));
        }
        for w in self.t.windows(2) {
            let h = w[1] - w[0];
            if ((h - self.dt) / self.dt).abs() > 1e-12 * (1.0 + w[1].abs() / self.dt) {
                return Err(RomError::InvalidConfig(format!(
                    "time grid is not uniform with spacing {}",
                    self.dt
                )));
            }
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.q.ncols()
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn m(&self) -> usize {
        self.u.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.nrows()
    }

    /// Columns `start..end` as a new snapshot set (same episode id).
    pub fn columns(&self, start: usize, end: usize) -> Result<SnapshotSet> {
        if end > self.k() || start + 2 > end {
            return Err(RomError::InvalidConfig(format!(
                "column range {start}..{end} invalid for {} snapshots",
                self.k()
            )));
        }
        let len = end - start;
        SnapshotSet::new(
            self.q.columns(start, len).into_owned(),
            self.qdot.as_ref().map(|qd| qd.columns(start, len).into_owned()),
            self.u.columns(start, len).into_owned(),
            self.y.columns(start, len).into_owned(),
            self.t[start],
            self.dt,
            self.episode_id.clone(),
        )
    }

    /// Copy with the first state column subtracted from every state column.
    pub fn centered(&self) -> SnapshotSet {
        let mut out = self.clone();
        let q0 = self.q.column(0).into_owned();
        for mut c in out.q.column_iter_mut() {
            c -= &q0;
        }
        out
    }
}

/// Integrates the full-order model with implicit Euler. Column 0 holds the
/// initial condition; step `k → k+1` applies the input `u_k` held over the step.
pub fn simulate_episode(
    fom: &FomSystem,
    input: &dyn InputSignal,
    q0: &DVector<f64>,
    v0: &DVector<f64>,
    dt: f64,
    n_steps: usize,
    episode_id: &str,
) -> Result<SnapshotSet> {
    let n = fom.n();
    if !(dt > 0.0) {
        return Err(RomError::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    if n_steps < 2 {
        return Err(RomError::InvalidConfig(format!(
            "n_steps must be at least 2, got {n_steps}"
        )));
    }
    if q0.len() != n || v0.len() != n {
        return Err(shape_mismatch("simulate_episode initial state", (n, 1), (q0.len(), 1)));
    }
    let m = fom.m();
    let mut qs = DMatrix::zeros(n, n_steps);
    let mut vs = DMatrix::zeros(n, n_steps);
    let mut us = DMatrix::zeros(m, n_steps);
    let mut ys = DMatrix::zeros(fom.p(), n_steps);

    let mut q = q0.clone();
    let mut v = v0.clone();
    for k in 0..n_steps {
        let u = input.input_at(k, k as f64 * dt);
        if u.len() != m {
            return Err(shape_mismatch("simulate_episode input", (m, 1), (u.len(), 1)));
        }
        qs.set_column(k, &q);
        vs.set_column(k, &v);
        ys.set_column(k, &fom.observe(&q));
        us.set_column(k, &u);
        if k + 1 == n_steps {
            break;
        }
        let (q_next, v_next) = implicit_euler_step(fom, &q, &v, &u, dt, k)?;
        if !(q_next.iter().all(|x| x.is_finite()) && v_next.iter().all(|x| x.is_finite())) {
            return Err(RomError::NonFiniteState { step: k + 1 });
        }
        q = q_next;
        v = v_next;
    }
    SnapshotSet::new(qs, Some(vs), us, ys, 0.0, dt, episode_id)
}

/// One implicit-Euler step: solves
/// `M(v⁺ − v) + dt·(C v⁺ + ∂U/∂q(q + dt·v⁺) − B u) = 0` for `v⁺` by Newton.
pub fn implicit_euler_step(
    fom: &FomSystem,
    q: &DVector<f64>,
    v: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
    step: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let force = fom.apply_input(u);
    let momentum = v.component_mul(&fom.mass);
    let scale = momentum.norm() + dt * (force.norm() + fom.potential_gradient(q).norm());
    let tol = NEWTON_TOL * scale;

    let residual = |v_new: &DVector<f64>| -> DVector<f64> {
        let q_new = q + v_new * dt;
        v_new.component_mul(&fom.mass) - &momentum
            + (fom.damping.mul_vec(v_new) + fom.potential_gradient(&q_new) - &force) * dt
    };

    let mut v_new = v.clone();
    let mut res = residual(&v_new);
    let mut res_norm = res.norm();
    let mut iterations = 0;
    while res_norm > tol {
        if iterations == NEWTON_MAX_ITERS || !res_norm.is_finite() {
            return Err(RomError::NewtonDivergence {
                step,
                iterations,
                residual: res_norm,
            });
        }
        let q_new = q + &v_new * dt;
        let mut jac = fom
            .damping
            .axpby(dt, &fom.tangent_stiffness(&q_new), dt * dt);
        for (d, m) in jac.diag.iter_mut().zip(fom.mass.iter()) {
            *d += m;
        }
        let delta = jac.solve(&res).ok_or(RomError::NewtonDivergence {
            step,
            iterations,
            residual: res_norm,
        })?;
        v_new -= delta;
        res = residual(&v_new);
        res_norm = res.norm();
        iterations += 1;
    }
    let q_new = q + &v_new * dt;
    Ok((q_new, v_new))
}

/// Piecewise-constant random input: every `hold_steps` steps each channel is
/// redrawn uniformly from `[−amplitude, amplitude]`.
pub fn random_control(
    seed: u64,
    m: usize,
    n_steps: usize,
    amplitude: f64,
    hold_steps: usize,
) -> Result<DMatrix<f64>> {
    if hold_steps == 0 {
        return Err(RomError::InvalidConfig("hold_steps must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(m, n_steps);
    let mut current = DVector::zeros(m);
    for k in 0..n_steps {
        if k % hold_steps == 0 {
            for c in current.iter_mut() {
                let draw: f64 = rng.random();
                *c = amplitude * (2.0 * draw - 1.0);
            }
        }
        out.set_column(k, &current);
    }
    Ok(out)
}
