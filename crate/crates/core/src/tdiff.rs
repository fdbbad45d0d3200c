//! Finite-difference estimation of reduced velocities and accelerations.
//!
//! Stencil weights are generated with Fornberg's recursion, so any accuracy
//! order and any set of offsets is available. Central schemes drop
//! `order / 2` samples at each end of the record.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Result, RomError};

/// Finite-difference weights for the derivatives `0..=max_deriv` at `x0`
/// from samples at `offsets` (unit spacing). Row `d` of the result holds the
/// weights of the `d`-th derivative.
pub fn fornberg_weights(x0: f64, offsets: &[f64], max_deriv: usize) -> Vec<Vec<f64>> {
    let n = offsets.len();
    let mut c = vec![vec![0.0; n]; max_deriv + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = offsets[0] - x0;
    for i in 1..n {
        let mn = i.min(max_deriv);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = offsets[i] - x0;
        for j in 0..i {
            let c3 = offsets[i] - offsets[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] *= c4 / c3;
        }
        c1 = c2;
    }
    c
}

/// Weights of the `deriv`-th derivative on the symmetric stencil
/// `−order/2 ..= order/2`.
pub fn central_weights(order: usize, deriv: usize) -> Vec<f64> {
    let h = (order / 2) as i64;
    let offsets: Vec<f64> = (-h..=h).map(|i| i as f64).collect();
    fornberg_weights(0.0, &offsets, deriv).swap_remove(deriv)
}

/// Accuracy order of the central scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct FdOrder(usize);

impl FdOrder {
    pub const SECOND: FdOrder = FdOrder(2);
    pub const FOURTH: FdOrder = FdOrder(4);
    pub const SIXTH: FdOrder = FdOrder(6);
    pub const EIGHTH: FdOrder = FdOrder(8);

    pub fn new(order: usize) -> Result<Self> {
        match order {
            2 | 4 | 6 | 8 => Ok(FdOrder(order)),
            _ => Err(RomError::InvalidConfig(format!(
                "finite-difference order must be 2, 4, 6 or 8, got {order}"
            ))),
        }
    }

    pub fn order(self) -> usize {
        self.0
    }

    pub fn half_width(self) -> usize {
        self.0 / 2
    }
}

impl Default for FdOrder {
    fn default() -> Self {
        FdOrder::EIGHTH
    }
}

impl TryFrom<usize> for FdOrder {
    type Error = RomError;
    fn try_from(v: usize) -> Result<Self> {
        FdOrder::new(v)
    }
}

impl From<FdOrder> for usize {
    fn from(o: FdOrder) -> usize {
        o.0
    }
}

/// Reduced state, velocity and acceleration on the retained columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeSet {
    pub qhat_trim: DMatrix<f64>,
    pub qhat_dot: DMatrix<f64>,
    pub qhat_ddot: DMatrix<f64>,
    /// Original column index of every retained column.
    pub kept_indices: Vec<usize>,
    pub dt: f64,
}

impl DerivativeSet {
    pub fn len(&self) -> usize {
        self.kept_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept_indices.is_empty()
    }

    pub fn r(&self) -> usize {
        self.qhat_trim.nrows()
    }

    /// Keeps only the columns whose flag is set.
    pub fn select(&self, keep: &[bool]) -> DerivativeSet {
        let cols: Vec<usize> = (0..self.len()).filter(|&j| keep[j]).collect();
        let pick = |m: &DMatrix<f64>| m.select_columns(cols.iter());
        DerivativeSet {
            qhat_trim: pick(&self.qhat_trim),
            qhat_dot: pick(&self.qhat_dot),
            qhat_ddot: pick(&self.qhat_ddot),
            kept_indices: cols.iter().map(|&j| self.kept_indices[j]).collect(),
            dt: self.dt,
        }
    }

    /// Column-wise concatenation of several episodes' derivative sets.
    pub fn concat(parts: &[DerivativeSet]) -> Result<DerivativeSet> {
        let first = parts
            .first()
            .ok_or_else(|| RomError::InvalidConfig("no derivative sets to concatenate".into()))?;
        let cat = |f: fn(&DerivativeSet) -> &DMatrix<f64>| {
            let blocks: Vec<&DMatrix<f64>> = parts.iter().map(f).collect();
            crate::linalg::hcat(&blocks)
        };
        for p in parts {
            if p.r() != first.r() {
                return Err(shape_mismatch(
                    "DerivativeSet::concat",
                    (first.r(), p.len()),
                    (p.r(), p.len()),
                ));
            }
        }
        Ok(DerivativeSet {
            qhat_trim: cat(|d| &d.qhat_trim),
            qhat_dot: cat(|d| &d.qhat_dot),
            qhat_ddot: cat(|d| &d.qhat_ddot),
            kept_indices: parts.iter().flat_map(|p| p.kept_indices.clone()).collect(),
            dt: first.dt,
        })
    }
}

fn apply_stencil(x: &DMatrix<f64>, weights: &[f64], h: usize, scale: f64) -> DMatrix<f64> {
    let (rows, k) = x.shape();
    let kept = k - 2 * h;
    let mut out = DMatrix::zeros(rows, kept);
    for j in 0..kept {
        let mut col = out.column_mut(j);
        for (s, &w) in weights.iter().enumerate() {
            if w != 0.0 {
                col.axpy(w * scale, &x.column(j + s), 1.0);
            }
        }
    }
    out
}

fn check_grid(k: usize, dt: f64, order: FdOrder) -> Result<()> {
    let needed = 2 * order.half_width() + 1;
    if k < needed {
        return Err(RomError::TooFewSnapshots { needed, got: k });
    }
    if !(dt > 0.0) {
        return Err(RomError::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    Ok(())
}

/// Central differences of the given order; the first and last `order/2`
/// columns are dropped.
pub fn central_diff(qhat: &DMatrix<f64>, dt: f64, order: FdOrder) -> Result<DerivativeSet> {
    let k = qhat.ncols();
    check_grid(k, dt, order)?;
    let h = order.half_width();
    let w1 = central_weights(order.order(), 1);
    let w2 = central_weights(order.order(), 2);
    Ok(DerivativeSet {
        qhat_trim: qhat.columns(h, k - 2 * h).into_owned(),
        qhat_dot: apply_stencil(qhat, &w1, h, 1.0 / dt),
        qhat_ddot: apply_stencil(qhat, &w2, h, 1.0 / (dt * dt)),
        kept_indices: (h..k - h).collect(),
        dt,
    })
}

/// Eighth-order central differences (9-point stencils).
pub fn central_diff_8(qhat: &DMatrix<f64>, dt: f64) -> Result<DerivativeSet> {
    central_diff(qhat, dt, FdOrder::EIGHTH)
}

/// Uses known reduced velocities; only the acceleration is differenced (as the
/// first derivative of the velocities). Columns are trimmed exactly as in
/// [`central_diff`].
pub fn diff_with_velocity(
    qhat: &DMatrix<f64>,
    qhat_dot: &DMatrix<f64>,
    dt: f64,
    order: FdOrder,
) -> Result<DerivativeSet> {
    if qhat.shape() != qhat_dot.shape() {
        return Err(shape_mismatch("diff_with_velocity", qhat.shape(), qhat_dot.shape()));
    }
    let k = qhat.ncols();
    check_grid(k, dt, order)?;
    let h = order.half_width();
    let w1 = central_weights(order.order(), 1);
    Ok(DerivativeSet {
        qhat_trim: qhat.columns(h, k - 2 * h).into_owned(),
        qhat_dot: qhat_dot.columns(h, k - 2 * h).into_owned(),
        qhat_ddot: apply_stencil(qhat_dot, &w1, h, 1.0 / dt),
        kept_indices: (h..k - h).collect(),
        dt,
    })
}

/// For each retained column of a central stencil, whether the input held
/// over every interval the stencil spans is constant. Piecewise-constant
/// forcing makes the acceleration jump at switch instants, and a stencil that
/// straddles one does not estimate a derivative.
pub fn smooth_forcing_mask(u: &DMatrix<f64>, order: FdOrder) -> Vec<bool> {
    let k = u.ncols();
    let h = order.half_width();
    if k < 2 * h + 1 {
        return Vec::new();
    }
    (h..k - h)
        .map(|j| (j - h + 1..j + h).all(|i| u.column(i) == u.column(j - h)))
        .collect()
}

/// One-sided first-derivative estimate at column 0 from the first
/// `order + 1` samples.
pub fn forward_velocity(qhat: &DMatrix<f64>, dt: f64, order: FdOrder) -> Result<nalgebra::DVector<f64>> {
    let npts = order.order() + 1;
    if qhat.ncols() < npts {
        return Err(RomError::TooFewSnapshots {
            needed: npts,
            got: qhat.ncols(),
        });
    }
    let offsets: Vec<f64> = (0..npts).map(|i| i as f64).collect();
    let w = fornberg_weights(0.0, &offsets, 1).swap_remove(1);
    let mut v = nalgebra::DVector::zeros(qhat.nrows());
    for (j, &wj) in w.iter().enumerate() {
        v.axpy(wj / dt, &qhat.column(j), 1.0);
    }
    Ok(v)
}
