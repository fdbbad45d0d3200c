//! Proper orthogonal decomposition: SVD-based bases for snapshot data.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Result, RomError};
use crate::linalg::{fix_column_signs, ThinSvd};

/// How many left singular vectors to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankSelector {
    Rank(usize),
    /// Smallest `r` whose cumulative energy strictly exceeds the threshold.
    Energy(f64),
}

impl Default for RankSelector {
    fn default() -> Self {
        RankSelector::Energy(0.95)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    /// `n x r`, orthonormal columns.
    pub v: DMatrix<f64>,
    /// All computed singular values, nonincreasing, length `min(n, K)`.
    pub singular_values: DVector<f64>,
    pub r: usize,
    pub energy_captured: f64,
}

/// Full thin SVD of a snapshot matrix, truncated on demand. Useful when the
/// same data is reduced at many ranks.
#[derive(Debug, Clone)]
pub struct PodSpectrum {
    modes: DMatrix<f64>,
    singular_values: DVector<f64>,
    cumulative_energy: Vec<f64>,
}

impl PodSpectrum {
    pub fn new(q: &DMatrix<f64>) -> Result<Self> {
        if q.iter().all(|&x| x == 0.0) {
            return Err(RomError::ZeroMatrix);
        }
        let svd = ThinSvd::new(q);
        let mut modes = svd.u;
        fix_column_signs(&mut modes, None);
        let total: f64 = svd.s.iter().map(|s| s * s).sum();
        let mut acc = 0.0;
        let cumulative_energy = svd
            .s
            .iter()
            .map(|s| {
                acc += s * s;
                (acc / total).min(1.0)
            })
            .collect();
        Ok(PodSpectrum {
            modes,
            singular_values: svd.s,
            cumulative_energy,
        })
    }

    pub fn max_rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }

    /// Fraction of `Σσ²` captured by the leading `r` modes.
    pub fn energy(&self, r: usize) -> f64 {
        if r == 0 {
            0.0
        } else {
            self.cumulative_energy[r.min(self.max_rank()) - 1]
        }
    }

    pub fn rank_for(&self, selector: RankSelector) -> Result<usize> {
        match selector {
            RankSelector::Rank(r) => {
                if r == 0 {
                    Err(RomError::InvalidConfig("rank must be positive".into()))
                } else if r > self.max_rank() {
                    Err(RomError::RankTooLarge {
                        requested: r,
                        max: self.max_rank(),
                    })
                } else {
                    Ok(r)
                }
            }
            RankSelector::Energy(tau) => {
                if !(tau > 0.0 && tau < 1.0) {
                    return Err(RomError::InvalidConfig(format!(
                        "energy threshold must lie in (0, 1), got {tau}"
                    )));
                }
                Ok(self
                    .cumulative_energy
                    .iter()
                    .position(|&e| e > tau)
                    .map(|i| i + 1)
                    .unwrap_or(self.max_rank()))
            }
        }
    }

    pub fn basis(&self, selector: RankSelector) -> Result<PodBasis> {
        let r = self.rank_for(selector)?;
        Ok(PodBasis {
            v: self.modes.columns(0, r).into_owned(),
            singular_values: self.singular_values.clone(),
            r,
            energy_captured: self.energy(r),
        })
    }
}

/// Leading left singular vectors of `q` under the chosen rank rule.
pub fn compute_basis(q: &DMatrix<f64>, selector: RankSelector) -> Result<PodBasis> {
    PodSpectrum::new(q)?.basis(selector)
}

impl PodBasis {
    pub fn n(&self) -> usize {
        self.v.nrows()
    }

    /// Reduced coordinates `Vᵀ Q`.
    pub fn project(&self, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if q.nrows() != self.n() {
            return Err(shape_mismatch("project", (self.n(), q.ncols()), q.shape()));
        }
        Ok(self.v.tr_mul(q))
    }

    pub fn project_vec(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        if q.len() != self.n() {
            return Err(shape_mismatch("project", (self.n(), 1), (q.len(), 1)));
        }
        Ok(self.v.tr_mul(q))
    }

    /// Full-state reconstruction `V Q̂`.
    pub fn lift(&self, qhat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if qhat.nrows() != self.r {
            return Err(shape_mismatch("lift", (self.r, qhat.ncols()), qhat.shape()));
        }
        Ok(&self.v * qhat)
    }
}
