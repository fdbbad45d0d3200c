//! Structure-preserving operator inference for second-order systems.
//!
//! Fits `q̈ + Ĉ q̇ + K̂ q = B̂ u` to reduced snapshot data with `K̂` and `Ĉ`
//! constrained to the cone `{X = Xᵀ, X ⪰ εI}`. The problem is a convex
//! least-squares program; it is solved with accelerated projected gradient
//! (Nesterov momentum, function-value restart) where the projection is
//! symmetrize-then-clip-eigenvalues.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Result, RomError};
use crate::synth_fom::SnapshotSet;
use crate::linalg::{self, solve_right, ThinSvd};
use crate::pod::PodBasis;
use crate::tdiff::{self, DerivativeSet, FdOrder};

const RANK_RCOND: f64 = 1e-12;

/// Reduced operators of `q̈ + Ĉ q̇ + K̂ q = B̂ u`, `y = Ê q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangianRom {
    pub khat: DMatrix<f64>,
    pub chat: DMatrix<f64>,
    pub bhat: DMatrix<f64>,
    pub ehat: DMatrix<f64>,
    pub r: usize,
    pub m: usize,
    pub p: usize,
    pub basis_ref: String,
    pub spd_floor: f64,
}

impl LagrangianRom {
    /// Assembles a ROM from operators without fitting; shapes are checked.
    pub fn from_operators(
        khat: DMatrix<f64>,
        chat: DMatrix<f64>,
        bhat: DMatrix<f64>,
        ehat: DMatrix<f64>,
        basis_ref: impl Into<String>,
        spd_floor: f64,
    ) -> Result<Self> {
        let r = khat.nrows();
        if khat.shape() != (r, r) {
            return Err(shape_mismatch("LagrangianRom K", (r, r), khat.shape()));
        }
        if chat.shape() != (r, r) {
            return Err(shape_mismatch("LagrangianRom C", (r, r), chat.shape()));
        }
        if bhat.nrows() != r {
            return Err(shape_mismatch("LagrangianRom B", (r, bhat.ncols()), bhat.shape()));
        }
        if ehat.ncols() != r {
            return Err(shape_mismatch("LagrangianRom E", (ehat.nrows(), r), ehat.shape()));
        }
        Ok(LagrangianRom {
            m: bhat.ncols(),
            p: ehat.nrows(),
            r,
            khat,
            chat,
            bhat,
            ehat,
            basis_ref: basis_ref.into(),
            spd_floor,
        })
    }

    /// First-order companion matrix `[[0, I], [−K̂, −Ĉ]]`.
    pub fn companion(&self) -> DMatrix<f64> {
        let r = self.r;
        let mut a = DMatrix::zeros(2 * r, 2 * r);
        a.view_mut((0, r), (r, r)).fill_with_identity();
        a.view_mut((r, 0), (r, r)).copy_from(&(-&self.khat));
        a.view_mut((r, r), (r, r)).copy_from(&(-&self.chat));
        a
    }

    /// Symmetry, eigenvalue floor and companion stability.
    pub fn check_structure(&self) -> StructureReport {
        let symmetric = self.khat == self.khat.transpose() && self.chat == self.chat.transpose();
        let min_eig_k = linalg::min_eigenvalue(&self.khat);
        let min_eig_c = linalg::min_eigenvalue(&self.chat);
        let max_real_part = linalg::eigenvalues(&self.companion())
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max);
        StructureReport {
            symmetric,
            min_eig_k,
            min_eig_c,
            max_real_part,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureReport {
    pub symmetric: bool,
    pub min_eig_k: f64,
    pub min_eig_c: f64,
    pub max_real_part: f64,
}

impl StructureReport {
    pub fn holds(&self, floor: f64) -> bool {
        self.symmetric && self.min_eig_k >= floor && self.min_eig_c >= floor && self.max_real_part < 0.0
    }
}

/// `K̂`, `Ĉ`, `B̂` of a fit (the output map is fitted separately).
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianOperators {
    pub khat: DMatrix<f64>,
    pub chat: DMatrix<f64>,
    pub bhat: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveFloor {
    pub stiffness: bool,
    pub damping: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Frobenius residual after initialization and after every accepted step.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
    pub active_floor: ActiveFloor,
    pub restarts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub spd_floor: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            spd_floor: 1e-8,
            max_iters: 50_000,
            tol: 1e-10,
        }
    }
}

// Compressed least-squares problem: ‖Q̈ + X Z‖² = ‖A + X W‖² + c_perp where
// Zᵀ = V S Uᵀ, A = Q̈ V and W = U S. X is expressed in block-scaled variables.
struct Problem {
    a: DMatrix<f64>,
    w: DMatrix<f64>,
    c_perp: f64,
    lipschitz: f64,
    r: usize,
    floors: [f64; 2],
}

impl Problem {
    fn residual(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a + x * &self.w
    }

    fn objective(&self, x: &DMatrix<f64>) -> f64 {
        0.5 * (self.residual(x).norm_squared() + self.c_perp)
    }

    fn gradient(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.residual(x) * self.w.transpose()
    }

    fn project(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, ActiveFloor) {
        let r = self.r;
        let mut out = x.clone();
        let mut active = [false; 2];
        for (blk, flag) in active.iter_mut().enumerate() {
            let block = x.columns(blk * r, r).into_owned();
            let (proj, clipped) = project_with_margin(&block, self.floors[blk]);
            out.columns_mut(blk * r, r).copy_from(&proj);
            *flag = clipped;
        }
        (
            out,
            ActiveFloor {
                stiffness: active[0],
                damping: active[1],
            },
        )
    }
}

// Clip to the floor plus a rounding margin relative to the spectrum, so the
// floor still holds after the matrix is rebuilt and rescaled.
fn project_with_margin(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, bool) {
    let sym = linalg::symmetrize(m);
    let eig = sym.clone().symmetric_eigen();
    let spread = eig.eigenvalues.amax();
    let target = floor + 1e-12 * spread;
    if eig.eigenvalues.iter().all(|&l| l >= target) {
        return (sym, false);
    }
    let clipped = eig.eigenvalues.map(|l| l.max(target));
    let rebuilt =
        &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (linalg::symmetrize(&rebuilt), true)
}

fn rms(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        0.0
    } else {
        m.norm() / (m.nrows() as f64).sqrt()
    }
}

/// Solves `min ‖Q̈ + ĈQ̇ + K̂Q − B̂U‖_F` over `K̂ = K̂ᵀ ⪰ εI`, `Ĉ = Ĉᵀ ⪰ εI`
/// and free `B̂`.
pub fn infer_lagrangian(
    d: &DerivativeSet,
    u_trim: &DMatrix<f64>,
    options: &SolverOptions,
) -> Result<(LagrangianOperators, FitDiagnostics)> {
    let r = d.r();
    let kp = d.len();
    let m = u_trim.nrows();
    if u_trim.ncols() != kp {
        return Err(shape_mismatch("infer_lagrangian U", (m, kp), u_trim.shape()));
    }
    if !(options.spd_floor > 0.0) {
        return Err(RomError::InvalidConfig("spd_floor must be positive".into()));
    }
    if kp < r + m {
        return Err(RomError::InsufficientSnapshots {
            needed: r + m,
            got: kp,
        });
    }

    // Block scaling keeps the Gram matrix well conditioned across blocks; a
    // scalar per block leaves the cone constraints unchanged up to the floor.
    let scales = [rms(&d.qhat_trim), rms(&d.qhat_dot), rms(u_trim)];
    let block_names = ["reduced states", "reduced velocities", "inputs"];
    for (s, name) in scales.iter().zip(block_names) {
        if !(*s > 0.0 && s.is_finite()) {
            return Err(RomError::RankDeficientData(format!("{name} are identically zero")));
        }
    }
    let z = linalg::vcat(&[
        &(&d.qhat_trim / scales[0]),
        &(&d.qhat_dot / scales[1]),
        &(u_trim / scales[2]),
    ]);
    let svd = ThinSvd::new(&z.transpose());
    let s_max = svd.s[0];
    let s_min = svd.s[svd.s.len() - 1];
    if svd.s.len() < 2 * r + m || s_min < RANK_RCOND * s_max {
        return Err(RomError::RankDeficientData(format!(
            "σ_min/σ_max = {:e} for [Q̂; Q̇̂; U]",
            s_min / s_max
        )));
    }
    // Zᵀ = V S Uᵀ with V = svd.u (K′×s) and U = svd.v (s×s).
    let qdd = &d.qhat_ddot;
    let a = qdd * &svd.u;
    let w = &svd.v * DMatrix::from_diagonal(&svd.s);
    let c_perp = (qdd - &a * svd.u.transpose()).norm_squared();
    let problem = Problem {
        a,
        w,
        c_perp,
        lipschitz: s_max * s_max,
        r,
        floors: [options.spd_floor * scales[0], options.spd_floor * scales[1]],
    };

    // Unconstrained least squares, then projected onto the feasible set.
    let s_inv = DMatrix::from_diagonal(&svd.s.map(|s| 1.0 / s));
    let x_ls = -(&problem.a * s_inv * svd.v.transpose());
    let (mut x, mut active) = problem.project(&x_ls);
    let mut f_x = problem.objective(&x);
    let scale_ref = 0.5 * qdd.norm_squared();
    let mut history = vec![(2.0 * f_x).sqrt()];
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;
    let mut restarts = 0;
    let step = 1.0 / problem.lipschitz;

    while iterations < options.max_iters {
        if f_x <= 1e-30 * scale_ref {
            converged = true;
            break;
        }
        let (mut x_new, mut act_new) = problem.project(&(&y - problem.gradient(&y) * step));
        let mut f_new = problem.objective(&x_new);
        if f_new > f_x {
            // momentum overshoot: restart from the current iterate
            restarts += 1;
            t = 1.0;
            let (xp, ap) = problem.project(&(&x - problem.gradient(&x) * step));
            x_new = xp;
            act_new = ap;
            f_new = problem.objective(&x_new);
            if f_new >= f_x {
                converged = true;
                break;
            }
        }
        iterations += 1;
        let rel = (f_x - f_new) / f_x.max(f64::MIN_POSITIVE);
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
        t = t_new;
        x = x_new;
        f_x = f_new;
        active = act_new;
        history.push((2.0 * f_x).sqrt());
        if rel < options.tol {
            converged = true;
            break;
        }
    }

    let khat = x.columns(0, r) / scales[0];
    let chat = x.columns(r, r) / scales[1];
    let bhat = -(x.columns(2 * r, m) / scales[2]);
    let diagnostics = FitDiagnostics {
        final_residual: *history.last().unwrap(),
        objective_history: history,
        iterations,
        converged,
        active_floor: active,
        restarts,
    };
    Ok((LagrangianOperators { khat, chat, bhat }, diagnostics))
}

/// `min ‖Y − Ê Q̂‖_F² + λ‖Ê‖_F²`.
pub fn infer_output(y: &DMatrix<f64>, qhat: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    if y.ncols() != qhat.ncols() {
        return Err(shape_mismatch("infer_output", (y.nrows(), qhat.ncols()), y.shape()));
    }
    if ridge < 0.0 {
        return Err(RomError::InvalidConfig("ridge must be nonnegative".into()));
    }
    if ridge == 0.0 {
        return Ok(solve_right(y, qhat, 1e-14).0);
    }
    let r = qhat.nrows();
    let y_aug = linalg::hcat(&[y, &DMatrix::zeros(y.nrows(), r)]);
    let q_aug = linalg::hcat(&[qhat, &(DMatrix::identity(r, r) * ridge.sqrt())]);
    Ok(solve_right(&y_aug, &q_aug, 0.0).0)
}

/// End-to-end settings for fitting from full-order snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LopinfSettings {
    pub solver: SolverOptions,
    pub fd_order: FdOrder,
    /// Project recorded velocities instead of differencing the states.
    pub use_exact_velocity: bool,
    /// Drop derivative columns whose stencil straddles an input switch.
    pub skip_input_switches: bool,
    pub output_ridge: f64,
}

impl Default for LopinfSettings {
    fn default() -> Self {
        LopinfSettings {
            solver: SolverOptions::default(),
            fd_order: FdOrder::EIGHTH,
            use_exact_velocity: false,
            skip_input_switches: false,
            output_ridge: 0.0,
        }
    }
}

/// Reduced derivative data of several episodes; differencing never crosses
/// an episode boundary.
pub fn reduced_training_data(
    episodes: &[&SnapshotSet],
    basis: &PodBasis,
    settings: &LopinfSettings,
) -> Result<(DerivativeSet, DMatrix<f64>)> {
    let mut sets = Vec::with_capacity(episodes.len());
    let mut inputs = Vec::with_capacity(episodes.len());
    for ep in episodes {
        let qhat = basis.project(&ep.q)?;
        let derivs = match (&ep.qdot, settings.use_exact_velocity) {
            (Some(qdot), true) => {
                tdiff::diff_with_velocity(&qhat, &basis.project(qdot)?, ep.dt, settings.fd_order)?
            }
            _ => tdiff::central_diff(&qhat, ep.dt, settings.fd_order)?,
        };
        let u_trim = ep.u.select_columns(derivs.kept_indices.iter());
        let (derivs, u_trim) = if settings.skip_input_switches {
            let mask = tdiff::smooth_forcing_mask(&ep.u, settings.fd_order);
            let cols: Vec<usize> = (0..mask.len()).filter(|&j| mask[j]).collect();
            (derivs.select(&mask), u_trim.select_columns(cols.iter()))
        } else {
            (derivs, u_trim)
        };
        sets.push(derivs);
        inputs.push(u_trim);
    }
    let d = DerivativeSet::concat(&sets)?;
    let blocks: Vec<&DMatrix<f64>> = inputs.iter().collect();
    Ok((d, linalg::hcat(&blocks)))
}

/// Fits a complete Lagrangian ROM on the given basis.
pub fn fit_lopinf(
    episodes: &[&SnapshotSet],
    basis: &PodBasis,
    basis_ref: &str,
    settings: &LopinfSettings,
) -> Result<(LagrangianRom, FitDiagnostics)> {
    let (d, u_trim) = reduced_training_data(episodes, basis, settings)?;
    let (ops, diag) = infer_lagrangian(&d, &u_trim, &settings.solver)?;
    let qhats: Vec<DMatrix<f64>> = episodes
        .iter()
        .map(|ep| basis.project(&ep.q))
        .collect::<Result<_>>()?;
    let q_all = linalg::hcat(&qhats.iter().collect::<Vec<_>>());
    let y_all = linalg::hcat(&episodes.iter().map(|ep| &ep.y).collect::<Vec<_>>());
    let ehat = infer_output(&y_all, &q_all, settings.output_ridge)?;
    let rom = LagrangianRom::from_operators(
        ops.khat,
        ops.chat,
        ops.bhat,
        ehat,
        basis_ref,
        settings.solver.spd_floor,
    )?;
    Ok((rom, diag))
}
