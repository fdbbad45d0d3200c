//! Input-output identification: observer/Kalman filter identification (OKID)
//! for Markov parameters and the eigensystem realization algorithm (ERA).
//!
//! OKID regresses each output on the current input and `q` lags of the
//! stacked signal `[u; y]`:
//!
//! ```text
//! y_k = D u_k + Σ_{j=1..q} (α_j u_{k−j} + β_j y_{k−j})
//! ```
//!
//! and recovers `h_0 = D`, `h_k = α_k + Σ_{j=1..k} β_j h_{k−j}`. ERA factors
//! the block-Hankel matrix of `h_1, h_2, …` into a balanced realization.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dmdc::{DiscreteKind, DiscreteLtiRom};
use crate::error::{shape_mismatch, Result, RomError};
use crate::linalg::{self, ThinSvd};

const REGRESSION_RCOND: f64 = 1e-10;
/// Default cutoff for the regression solution; smaller singular directions
/// of the regressor matrix are treated as noise.
pub const DEFAULT_SOLUTION_RCOND: f64 = 1e-6;
const HANKEL_RCOND: f64 = 1e-13;

/// Markov parameters `h_0 = D`, `h_k = E A^{k−1} B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovSequence {
    pub h: Vec<DMatrix<f64>>,
    pub dt: f64,
}

impl MarkovSequence {
    pub fn new(h: Vec<DMatrix<f64>>, dt: f64) -> Result<Self> {
        let first = h
            .first()
            .ok_or_else(|| RomError::InvalidConfig("Markov sequence needs h_0".into()))?;
        let shape = first.shape();
        for block in &h {
            if block.shape() != shape {
                return Err(shape_mismatch("Markov block", shape, block.shape()));
            }
        }
        Ok(MarkovSequence { h, dt })
    }

    /// Index of the last block.
    pub fn l(&self) -> usize {
        self.h.len() - 1
    }

    pub fn p(&self) -> usize {
        self.h[0].nrows()
    }

    pub fn m(&self) -> usize {
        self.h[0].ncols()
    }

    /// Exact Markov parameters of a discrete LTI system up to `h_l`.
    pub fn of_system(rom: &DiscreteLtiRom, l: usize) -> Self {
        let mut h = Vec::with_capacity(l + 1);
        h.push(
            rom.d
                .clone()
                .unwrap_or_else(|| DMatrix::zeros(rom.p(), rom.m())),
        );
        let mut ab = rom.b.clone();
        for _ in 1..=l {
            h.push(&rom.e * &ab);
            ab = &rom.a * ab;
        }
        MarkovSequence { h, dt: rom.dt }
    }
}

/// Observer order with at least twice as many regression equations as
/// unknowns per output, capped at `cap`.
pub fn max_observer_order(k: usize, m: usize, p: usize, cap: usize) -> usize {
    if k <= m {
        return 0;
    }
    ((k - m) / (2 * (m + p))).min(cap)
}

/// Markov parameters from one zero-initial-state input/output record.
pub fn okid_markov(u: &DMatrix<f64>, y: &DMatrix<f64>, q_obs: usize, dt: f64) -> Result<MarkovSequence> {
    okid_markov_extended(u, y, q_obs, q_obs, DEFAULT_SOLUTION_RCOND, dt)
}

/// As [`okid_markov`], continuing the recursion past `q_obs` (where the
/// observer input terms vanish) up to `h_len`. Singular directions of the
/// regressors below `rcond · σ_max` are dropped from the solution.
pub fn okid_markov_extended(
    u: &DMatrix<f64>,
    y: &DMatrix<f64>,
    q_obs: usize,
    len: usize,
    rcond: f64,
    dt: f64,
) -> Result<MarkovSequence> {
    let (m, k) = u.shape();
    let p = y.nrows();
    if y.ncols() != k {
        return Err(shape_mismatch("okid_markov Y", (p, k), y.shape()));
    }
    if q_obs == 0 {
        return Err(RomError::InvalidConfig("observer order must be positive".into()));
    }
    let rows = m + q_obs * (m + p);
    if k <= rows {
        return Err(RomError::InsufficientSnapshots { needed: rows + 1, got: k });
    }
    // Block scaling keeps the relative rank threshold meaningful when inputs
    // and outputs have very different magnitudes.
    let su = rms(u);
    let sy = rms(y);
    if su == 0.0 {
        return Err(RomError::RankDeficientRegression { rank: 0, required: m * (q_obs + 1) });
    }
    let sy = if sy == 0.0 { 1.0 } else { sy };
    let mut v = DMatrix::zeros(rows, k);
    v.view_mut((0, 0), (m, k)).copy_from(&(u / su));
    for j in 1..=q_obs {
        let base = m + (j - 1) * (m + p);
        let len = k - j;
        v.view_mut((base, j), (m, len)).copy_from(&(u.columns(0, len) / su));
        v.view_mut((base + m, j), (p, len)).copy_from(&(y.columns(0, len) / sy));
    }
    let svd = ThinSvd::new(&v);
    let rank = svd.numerical_rank(REGRESSION_RCOND);
    let required = m * (q_obs + 1);
    if rank < required {
        return Err(RomError::RankDeficientRegression { rank, required });
    }
    let (theta, _) = linalg::solve_right_with(&(y / sy), &svd, rcond.max(REGRESSION_RCOND));
    // undo the scaling: theta blocks map scaled regressors to scaled outputs
    let d = theta.columns(0, m) * (sy / su);
    let alpha: Vec<DMatrix<f64>> = (1..=q_obs)
        .map(|j| theta.columns(m + (j - 1) * (m + p), m) * (sy / su))
        .collect();
    let beta: Vec<DMatrix<f64>> = (1..=q_obs)
        .map(|j| theta.columns(m + (j - 1) * (m + p) + m, p).into_owned())
        .collect();
    let len = len.max(q_obs);
    let mut h = Vec::with_capacity(len + 1);
    h.push(d);
    for kk in 1..=len {
        let mut hk = if kk <= q_obs {
            alpha[kk - 1].clone()
        } else {
            DMatrix::zeros(p, m)
        };
        for j in 1..=kk.min(q_obs) {
            hk += &beta[j - 1] * &h[kk - j];
        }
        h.push(hk);
    }
    Ok(MarkovSequence { h, dt })
}

fn rms(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.norm() / (a.len() as f64).sqrt()
}

/// Block-Hankel matrices `H0[i,j] = h_{i+j+1}`, `H1[i,j] = h_{i+j+2}`
/// (zero-based block indices).
#[derive(Debug, Clone)]
pub struct HankelPair {
    pub h0: DMatrix<f64>,
    pub h1: DMatrix<f64>,
    pub alpha: usize,
    pub beta: usize,
}

impl HankelPair {
    pub fn new(markov: &MarkovSequence, alpha: usize, beta: usize) -> Result<Self> {
        if alpha == 0 || beta == 0 {
            return Err(RomError::InvalidConfig("Hankel block dimensions must be positive".into()));
        }
        if markov.l() < alpha + beta {
            return Err(RomError::InsufficientSnapshots {
                needed: alpha + beta,
                got: markov.l(),
            });
        }
        let (p, m) = (markov.p(), markov.m());
        let mut h0 = DMatrix::zeros(alpha * p, beta * m);
        let mut h1 = DMatrix::zeros(alpha * p, beta * m);
        for i in 0..alpha {
            for j in 0..beta {
                h0.view_mut((i * p, j * m), (p, m)).copy_from(&markov.h[i + j + 1]);
                h1.view_mut((i * p, j * m), (p, m)).copy_from(&markov.h[i + j + 2]);
            }
        }
        Ok(HankelPair { h0, h1, alpha, beta })
    }

    /// Default block dimensions `α = β = ⌊l/2⌋`.
    pub fn balanced(markov: &MarkovSequence) -> Result<Self> {
        let half = markov.l() / 2;
        HankelPair::new(markov, half, half)
    }
}

/// Hankel data with its SVD computed once, for realizations at several orders.
#[derive(Debug, Clone)]
pub struct EraModel {
    hankel: HankelPair,
    svd: ThinSvd,
    d: DMatrix<f64>,
    dt: f64,
}

impl EraModel {
    pub fn new(markov: &MarkovSequence, alpha: usize, beta: usize) -> Result<Self> {
        let hankel = HankelPair::new(markov, alpha, beta)?;
        let svd = ThinSvd::new(&hankel.h0);
        Ok(EraModel {
            hankel,
            svd,
            d: markov.h[0].clone(),
            dt: markov.dt,
        })
    }

    pub fn hankel(&self) -> &HankelPair {
        &self.hankel
    }

    pub fn singular_values(&self) -> &nalgebra::DVector<f64> {
        &self.svd.s
    }

    pub fn max_order(&self) -> usize {
        self.svd.rank()
    }

    pub fn realize(&self, r: usize) -> Result<DiscreteLtiRom> {
        if r == 0 {
            return Err(RomError::InvalidConfig("realization order must be positive".into()));
        }
        if r > self.max_order() {
            return Err(RomError::RankTooLarge { requested: r, max: self.max_order() });
        }
        let s = &self.svd.s;
        let ratio = if s[0] > 0.0 { s[r - 1] / s[0] } else { 0.0 };
        if ratio < HANKEL_RCOND {
            return Err(RomError::SingularTruncation {
                ratio,
                threshold: HANKEL_RCOND,
            });
        }
        let (p, m) = self.d.shape();
        let sqrt_s: Vec<f64> = (0..r).map(|i| s[i].sqrt()).collect();
        // U_r Σ^{1/2} and V_r Σ^{1/2}
        let mut obs = self.svd.u.columns(0, r).into_owned();
        let mut ctrl = self.svd.v.columns(0, r).into_owned();
        for i in 0..r {
            obs.column_mut(i).scale_mut(sqrt_s[i]);
            ctrl.column_mut(i).scale_mut(sqrt_s[i]);
        }
        let mut a = self.svd.u.columns(0, r).transpose() * &self.hankel.h1 * self.svd.v.columns(0, r);
        for i in 0..r {
            for j in 0..r {
                a[(i, j)] /= sqrt_s[i] * sqrt_s[j];
            }
        }
        let b = ctrl.rows(0, m).transpose();
        let e = obs.rows(0, p).into_owned();
        Ok(DiscreteLtiRom {
            a,
            b,
            e,
            d: Some(self.d.clone()),
            dt: self.dt,
            kind: DiscreteKind::EraOkid,
            basis: None,
        })
    }
}

/// Balanced realization of order `r` from Markov parameters.
pub fn era_realize(markov: &MarkovSequence, alpha: usize, beta: usize, r: usize) -> Result<DiscreteLtiRom> {
    EraModel::new(markov, alpha, beta)?.realize(r)
}

/// Settings for the OKID + ERA pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EraSettings {
    /// Requested observer order; clamped to what the record length supports.
    pub q_obs: usize,
    /// Index of the last Markov block; `None` selects
    /// `max(q_obs, min(600, ⌊K/2⌋))`.
    pub markov_len: Option<usize>,
    /// Relative singular value cutoff of the OKID regression solution.
    pub regression_rcond: f64,
    /// Hankel block rows; `None` selects `⌊l/2⌋`.
    pub alpha: Option<usize>,
    /// Hankel block columns; `None` selects `⌊l/2⌋`.
    pub beta: Option<usize>,
}

impl Default for EraSettings {
    fn default() -> Self {
        EraSettings {
            q_obs: 100,
            markov_len: None,
            regression_rcond: DEFAULT_SOLUTION_RCOND,
            alpha: None,
            beta: None,
        }
    }
}

const DEFAULT_MARKOV_CAP: usize = 600;

/// OKID on one record, then the Hankel factorization ready for realization.
pub fn prepare_era(u: &DMatrix<f64>, y: &DMatrix<f64>, dt: f64, settings: &EraSettings) -> Result<EraModel> {
    let k = u.ncols();
    let q = max_observer_order(k, u.nrows(), y.nrows(), settings.q_obs);
    if q == 0 {
        return Err(RomError::InsufficientSnapshots {
            needed: 2 * (u.nrows() + y.nrows()) + u.nrows(),
            got: k,
        });
    }
    let len = settings
        .markov_len
        .unwrap_or_else(|| (k / 2).min(DEFAULT_MARKOV_CAP))
        .max(q);
    let markov = okid_markov_extended(u, y, q, len, settings.regression_rcond, dt)?;
    let half = markov.l() / 2;
    EraModel::new(
        &markov,
        settings.alpha.unwrap_or(half),
        settings.beta.unwrap_or(half),
    )
}
