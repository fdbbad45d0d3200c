//! Dynamic mode decomposition with control.
//!
//! From snapshot pairs `(q_k, u_k) → q_{k+1}`, the stacked matrix
//! `Ω = [Q; U]` and the shifted states `Q′` are both truncated by SVD:
//! `Ω ≈ Ũ Σ̃ Ṽᵀ` (rank `p`) with `Ũ = [Ũ₁; Ũ₂]`, and `Q′ ≈ Û Σ̂ V̂ᵀ` (rank `r`).
//! The reduced operators are
//!
//! ```text
//! Ã = Ûᵀ Q′ Ṽ Σ̃⁻¹ Ũ₁ᵀ Û,    B̃ = Ûᵀ Q′ Ṽ Σ̃⁻¹ Ũ₂ᵀ,
//! ```
//!
//! and the model evolves `q̃_{k+1} = Ã q̃_k + B̃ u_k` with `q ≈ Û q̃`.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Result, RomError};
use crate::linalg::{self, ThinSvd};
use crate::pod::RankSelector;
use crate::synth_fom::SnapshotSet;

const TRUNCATION_RCOND: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscreteKind {
    Dmdc,
    EraOkid,
}

/// Discrete-time linear ROM `x_{k+1} = A x_k + B u_k`, `y_k = E x_k (+ D u_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteLtiRom {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub d: Option<DMatrix<f64>>,
    pub dt: f64,
    pub kind: DiscreteKind,
    /// State-reconstruction basis `Û` (DMDc only).
    pub basis: Option<DMatrix<f64>>,
}

impl DiscreteLtiRom {
    pub fn r(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.e.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.r();
        if self.a.shape() != (r, r) {
            return Err(shape_mismatch("DiscreteLtiRom A", (r, r), self.a.shape()));
        }
        if self.b.nrows() != r {
            return Err(shape_mismatch("DiscreteLtiRom B", (r, self.m()), self.b.shape()));
        }
        if self.e.ncols() != r {
            return Err(shape_mismatch("DiscreteLtiRom E", (self.p(), r), self.e.shape()));
        }
        if !(self.dt > 0.0) {
            return Err(RomError::InvalidConfig("dt must be positive".into()));
        }
        match (&self.d, self.kind) {
            (Some(d), DiscreteKind::EraOkid) => {
                if d.shape() != (self.p(), self.m()) {
                    return Err(shape_mismatch("DiscreteLtiRom D", (self.p(), self.m()), d.shape()));
                }
            }
            (None, DiscreteKind::Dmdc) => {}
            _ => {
                return Err(RomError::InvalidConfig(
                    "feedthrough D must be present exactly for ERA/OKID models".into(),
                ))
            }
        }
        if let Some(basis) = &self.basis {
            if basis.ncols() != r {
                return Err(shape_mismatch("DiscreteLtiRom basis", (basis.nrows(), r), basis.shape()));
            }
        }
        Ok(())
    }

    /// Transfer matrix `D + E (zI − A)⁻¹ B` at a complex point.
    pub fn transfer(&self, z: Complex<f64>) -> Option<DMatrix<Complex<f64>>> {
        let r = self.r();
        let to_c = |m: &DMatrix<f64>| m.map(|x| Complex::new(x, 0.0));
        let mut lhs = -to_c(&self.a);
        for i in 0..r {
            lhs[(i, i)] += z;
        }
        let x = lhs.lu().solve(&to_c(&self.b))?;
        let mut g = to_c(&self.e) * x;
        if let Some(d) = &self.d {
            g += to_c(d);
        }
        Some(g)
    }
}

/// Snapshot pairs with both SVDs precomputed, so several truncations can be
/// fitted from one factorization.
#[derive(Debug, Clone)]
pub struct DmdcData {
    n: usize,
    m: usize,
    pairs: usize,
    omega: ThinSvd,
    shifted: ThinSvd,
}

impl DmdcData {
    /// Pairs `(x_k, u_k) → x_next_k` given column-aligned matrices.
    pub fn from_pairs(x: &DMatrix<f64>, x_next: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<Self> {
        if x.shape() != x_next.shape() {
            return Err(shape_mismatch("DMDc shifted states", x.shape(), x_next.shape()));
        }
        if u.ncols() != x.ncols() {
            return Err(shape_mismatch("DMDc inputs", (u.nrows(), x.ncols()), u.shape()));
        }
        if x.ncols() == 0 {
            return Err(RomError::InsufficientSnapshots { needed: 2, got: 1 });
        }
        let omega = linalg::vcat(&[x, u]);
        Ok(DmdcData {
            n: x.nrows(),
            m: u.nrows(),
            pairs: x.ncols(),
            omega: ThinSvd::new(&omega),
            shifted: ThinSvd::new(x_next),
        })
    }

    /// Single trajectory: `Q` columns `0..K−1` map to columns `1..K`.
    pub fn from_trajectory(q: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<Self> {
        let k = q.ncols();
        if k < 2 {
            return Err(RomError::InsufficientSnapshots { needed: 2, got: k });
        }
        if u.ncols() != k {
            return Err(shape_mismatch("fit_dmdc inputs", (u.nrows(), k), u.shape()));
        }
        DmdcData::from_pairs(
            &q.columns(0, k - 1).into_owned(),
            &q.columns(1, k - 1).into_owned(),
            &u.columns(0, k - 1).into_owned(),
        )
    }

    /// Pairs from several episodes; no pair crosses an episode boundary.
    pub fn from_episodes(episodes: &[&SnapshotSet]) -> Result<Self> {
        let (x, x_next, u) = episode_pairs(episodes)?;
        DmdcData::from_pairs(&x, &x_next, &u)
    }

    pub fn max_p(&self) -> usize {
        self.omega.rank()
    }

    pub fn max_r(&self) -> usize {
        self.shifted.rank()
    }

    fn resolve(svd: &ThinSvd, sel: RankSelector, max: usize) -> Result<usize> {
        match sel {
            RankSelector::Rank(0) => {
                Err(RomError::InvalidConfig("truncation rank must be positive".into()))
            }
            RankSelector::Rank(k) if k > max => Err(RomError::RankTooLarge { requested: k, max }),
            RankSelector::Rank(k) => Ok(k),
            RankSelector::Energy(tau) => {
                if !(tau > 0.0 && tau < 1.0) {
                    return Err(RomError::InvalidConfig(format!(
                        "energy threshold must lie in (0, 1), got {tau}"
                    )));
                }
                let total: f64 = svd.s.iter().map(|s| s * s).sum();
                let mut acc = 0.0;
                for (i, s) in svd.s.iter().enumerate() {
                    acc += s * s;
                    if acc / total > tau {
                        return Ok(i + 1);
                    }
                }
                Ok(max)
            }
        }
    }

    fn check_retained(svd: &ThinSvd, k: usize) -> Result<()> {
        let s0 = svd.s[0];
        let ratio = if s0 > 0.0 { svd.s[k - 1] / s0 } else { 0.0 };
        if ratio < TRUNCATION_RCOND {
            return Err(RomError::SingularTruncation {
                ratio,
                threshold: TRUNCATION_RCOND,
            });
        }
        Ok(())
    }

    /// Reduced operators at the requested truncations. The returned model has
    /// an empty (`0 x r`) output map; see [`fit_dmdc_output`].
    pub fn fit(&self, p_trunc: RankSelector, r_trunc: RankSelector, dt: f64) -> Result<DiscreteLtiRom> {
        let p = Self::resolve(&self.omega, p_trunc, (self.n + self.m).min(self.pairs))?;
        let r = Self::resolve(&self.shifted, r_trunc, self.n.min(self.pairs))?;
        if p > self.max_p() {
            return Err(RomError::RankTooLarge { requested: p, max: self.max_p() });
        }
        if r > self.max_r() {
            return Err(RomError::RankTooLarge { requested: r, max: self.max_r() });
        }
        if r > p {
            return Err(RomError::RankTooLarge { requested: r, max: p });
        }
        Self::check_retained(&self.omega, p)?;
        Self::check_retained(&self.shifted, r)?;

        let u_hat = self.shifted.u.columns(0, r);
        let u_tilde = self.omega.u.columns(0, p);
        let u1 = u_tilde.rows(0, self.n);
        let u2 = u_tilde.rows(self.n, self.m);
        // Ûᵀ Q′ = Σ̂ V̂ᵀ on the retained block
        let mut core = self.shifted.v.columns(0, r).transpose() * self.omega.v.columns(0, p);
        for i in 0..r {
            core.row_mut(i).scale_mut(self.shifted.s[i]);
        }
        for j in 0..p {
            core.column_mut(j).scale_mut(1.0 / self.omega.s[j]);
        }
        let a = &core * u1.transpose() * u_hat;
        let b = &core * u2.transpose();
        Ok(DiscreteLtiRom {
            a,
            b,
            e: DMatrix::zeros(0, r),
            d: None,
            dt,
            kind: DiscreteKind::Dmdc,
            basis: Some(u_hat.into_owned()),
        })
    }
}

pub(crate) fn episode_pairs(
    episodes: &[&SnapshotSet],
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    if episodes.is_empty() {
        return Err(RomError::InsufficientSnapshots { needed: 2, got: 0 });
    }
    let mut xs = Vec::new();
    let mut xn = Vec::new();
    let mut us = Vec::new();
    for ep in episodes {
        let k = ep.k();
        if k < 2 {
            return Err(RomError::InsufficientSnapshots { needed: 2, got: k });
        }
        xs.push(ep.q.columns(0, k - 1).into_owned());
        xn.push(ep.q.columns(1, k - 1).into_owned());
        us.push(ep.u.columns(0, k - 1).into_owned());
    }
    let cat = |v: &Vec<DMatrix<f64>>| linalg::hcat(&v.iter().collect::<Vec<_>>());
    Ok((cat(&xs), cat(&xn), cat(&us)))
}

/// Fits Ã and B̃ from one trajectory.
pub fn fit_dmdc(
    q: &DMatrix<f64>,
    u: &DMatrix<f64>,
    p_trunc: RankSelector,
    r_trunc: RankSelector,
    dt: f64,
) -> Result<DiscreteLtiRom> {
    DmdcData::from_trajectory(q, u)?.fit(p_trunc, r_trunc, dt)
}

/// `E = E_approx Û` where `E_approx = argmin ‖Y − E_approx Q‖_F`.
pub fn fit_dmdc_output(
    y: &DMatrix<f64>,
    q: &DMatrix<f64>,
    basis: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if y.ncols() != q.ncols() {
        return Err(shape_mismatch("fit_dmdc_output Y", (y.nrows(), q.ncols()), y.shape()));
    }
    if basis.nrows() != q.nrows() {
        return Err(shape_mismatch("fit_dmdc_output basis", (q.nrows(), basis.ncols()), basis.shape()));
    }
    let (e_approx, _) = linalg::solve_right(y, q, 1e-12);
    Ok(e_approx * basis)
}

/// DMDc with its output map, fitted on every pair of the given episodes.
pub fn fit_dmdc_episodes(
    data: &DmdcData,
    episodes: &[&SnapshotSet],
    r: usize,
    p_trunc: Option<usize>,
) -> Result<DiscreteLtiRom> {
    let first = episodes
        .first()
        .ok_or(RomError::InsufficientSnapshots { needed: 2, got: 0 })?;
    let p = p_trunc.unwrap_or(r + first.m());
    let mut rom = data.fit(RankSelector::Rank(p), RankSelector::Rank(r), first.dt)?;
    let (x, _, _) = episode_pairs(episodes)?;
    let y: Vec<DMatrix<f64>> = episodes
        .iter()
        .map(|ep| ep.y.columns(0, ep.k() - 1).into_owned())
        .collect();
    let y = linalg::hcat(&y.iter().collect::<Vec<_>>());
    rom.e = fit_dmdc_output(&y, &x, rom.basis.as_ref().unwrap())?;
    Ok(rom)
}
