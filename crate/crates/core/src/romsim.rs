//! Time integration of learned ROMs.
//!
//! The Lagrangian ROM `q̈ + Ĉ q̇ + K̂ q = B̂ u` is advanced on its first-order
//! form with the input held constant over each step. Both schemes reduce to
//! one `r x r` linear solve per step with a factorization computed once.

use nalgebra::{DMatrix, DVector, LU, Dyn};
use serde::{Deserialize, Serialize};

use crate::dmdc::{DiscreteKind, DiscreteLtiRom};
use crate::error::{shape_mismatch, Result, RomError};
use crate::lopinf::LagrangianRom;
use crate::pod::PodBasis;
use crate::synth_fom::SnapshotSet;
use crate::tdiff::{self, FdOrder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    ImplicitEuler,
    NewmarkTrapezoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RomKind {
    Lagrangian,
    Dmdc,
    EraOkid,
}

impl From<DiscreteKind> for RomKind {
    fn from(kind: DiscreteKind) -> Self {
        match kind {
            DiscreteKind::Dmdc => RomKind::Dmdc,
            DiscreteKind::EraOkid => RomKind::EraOkid,
        }
    }
}

/// Reduced states and predicted outputs on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RomTrajectory {
    pub qhat: DMatrix<f64>,
    pub yhat: DMatrix<f64>,
    pub t: Vec<f64>,
    pub rom_kind: RomKind,
}

impl RomTrajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

fn time_grid(k: usize, dt: f64) -> Vec<f64> {
    (0..k).map(|i| i as f64 * dt).collect()
}

/// Integrates the Lagrangian ROM over the `K` columns of `u`; column 0 holds
/// the initial condition and step `k → k+1` uses `u_k`.
pub fn integrate_lagrangian(
    rom: &LagrangianRom,
    qhat0: &DVector<f64>,
    qhatdot0: &DVector<f64>,
    u: &DMatrix<f64>,
    dt: f64,
    scheme: Scheme,
) -> Result<RomTrajectory> {
    let r = rom.r;
    if !(dt > 0.0) {
        return Err(RomError::InvalidConfig("dt must be positive".into()));
    }
    if qhat0.len() != r || qhatdot0.len() != r {
        return Err(shape_mismatch("initial reduced state", (r, 1), (qhat0.len(), qhatdot0.len())));
    }
    if u.nrows() != rom.m {
        return Err(shape_mismatch("ROM input", (rom.m, u.ncols()), u.shape()));
    }
    let k = u.ncols();
    let mut qhat = DMatrix::zeros(r, k);
    if k == 0 {
        return Ok(RomTrajectory {
            qhat,
            yhat: DMatrix::zeros(rom.p, 0),
            t: Vec::new(),
            rom_kind: RomKind::Lagrangian,
        });
    }
    let ident = DMatrix::<f64>::identity(r, r);
    let (lhs_c, lhs_k) = match scheme {
        Scheme::ImplicitEuler => (dt, dt * dt),
        Scheme::NewmarkTrapezoid => (0.5 * dt, 0.25 * dt * dt),
    };
    let lu: LU<f64, Dyn, Dyn> = (&ident + &rom.chat * lhs_c + &rom.khat * lhs_k).lu();
    if !lu.is_invertible() {
        return Err(RomError::NonFiniteState { step: 0 });
    }
    let mut q = qhat0.clone();
    let mut v = qhatdot0.clone();
    qhat.set_column(0, &q);
    for step in 0..k - 1 {
        let force = &rom.bhat * u.column(step);
        let rhs = match scheme {
            Scheme::ImplicitEuler => &v + (&force - &rom.khat * &q) * dt,
            Scheme::NewmarkTrapezoid => {
                &v + (&force - &rom.khat * &q) * dt
                    - &rom.chat * &v * (0.5 * dt)
                    - &rom.khat * &v * (0.25 * dt * dt)
            }
        };
        let v_next = lu
            .solve(&rhs)
            .ok_or(RomError::NonFiniteState { step: step + 1 })?;
        q = match scheme {
            Scheme::ImplicitEuler => &q + &v_next * dt,
            Scheme::NewmarkTrapezoid => &q + (&v + &v_next) * (0.5 * dt),
        };
        v = v_next;
        if !q.iter().chain(v.iter()).all(|x| x.is_finite()) {
            return Err(RomError::NonFiniteState { step: step + 1 });
        }
        qhat.set_column(step + 1, &q);
    }
    let yhat = &rom.ehat * &qhat;
    Ok(RomTrajectory {
        qhat,
        yhat,
        t: time_grid(k, dt),
        rom_kind: RomKind::Lagrangian,
    })
}

/// Iterates `x_{k+1} = A x_k + B u_k`, `y_k = E x_k (+ D u_k)`.
pub fn rollout_discrete(rom: &DiscreteLtiRom, x0: &DVector<f64>, u: &DMatrix<f64>) -> Result<RomTrajectory> {
    let r = rom.r();
    if x0.len() != r {
        return Err(shape_mismatch("initial discrete state", (r, 1), (x0.len(), 1)));
    }
    if u.nrows() != rom.m() {
        return Err(shape_mismatch("ROM input", (rom.m(), u.ncols()), u.shape()));
    }
    let k = u.ncols();
    let mut x = DMatrix::zeros(r, k);
    if k > 0 {
        x.set_column(0, x0);
    }
    for step in 1..k {
        let next = &rom.a * x.column(step - 1) + &rom.b * u.column(step - 1);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(RomError::NonFiniteState { step });
        }
        x.set_column(step, &next);
    }
    let mut yhat = &rom.e * &x;
    if let Some(d) = &rom.d {
        yhat += d * u;
    }
    if !yhat.iter().all(|v| v.is_finite()) {
        return Err(RomError::NonFiniteState { step: k.saturating_sub(1) });
    }
    Ok(RomTrajectory {
        qhat: x,
        yhat,
        t: time_grid(k, rom.dt),
        rom_kind: rom.kind.into(),
    })
}

/// Reduced initial condition of an episode: `V̂ᵀ q_0`, and `V̂ᵀ v_0` when
/// velocities were recorded, else a one-sided difference of the first
/// projected snapshots.
pub fn lagrangian_initial_state(
    basis: &PodBasis,
    episode: &SnapshotSet,
    fd_order: FdOrder,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let q0 = basis.project_vec(&episode.q.column(0).into_owned())?;
    let v0 = match &episode.qdot {
        Some(qdot) => basis.project_vec(&qdot.column(0).into_owned())?,
        None => {
            let npts = (fd_order.order() + 1).min(episode.k());
            let head = basis.project(&episode.q.columns(0, npts).into_owned())?;
            let order = if npts > fd_order.order() {
                fd_order
            } else {
                FdOrder::new(2)?
            };
            tdiff::forward_velocity(&head, episode.dt, order)?
        }
    };
    Ok((q0, v0))
}

/// Discrete initial state: `Ûᵀ q_0` for DMDc, zero for ERA/OKID.
pub fn discrete_initial_state(rom: &DiscreteLtiRom, episode: &SnapshotSet) -> Result<DVector<f64>> {
    match (&rom.kind, &rom.basis) {
        (DiscreteKind::Dmdc, Some(basis)) => {
            if basis.nrows() != episode.n() {
                return Err(shape_mismatch("DMDc basis", (episode.n(), rom.r()), basis.shape()));
            }
            Ok(basis.transpose() * episode.q.column(0))
        }
        _ => Ok(DVector::zeros(rom.r())),
    }
}
