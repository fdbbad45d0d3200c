//! Relative output error, training dispatch for the three learners, and
//! comparison reports over reduced dimensions and episodes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dmdc::{fit_dmdc_episodes, DiscreteLtiRom, DmdcData};
use crate::era_okid::{prepare_era, EraModel, EraSettings};
use crate::error::{shape_mismatch, Result, RomError};
use crate::linalg;
use crate::lopinf::{fit_lopinf, FitDiagnostics, LagrangianRom, LopinfSettings};
use crate::pod::{PodBasis, PodSpectrum, RankSelector};
use crate::romsim::{
    discrete_initial_state, integrate_lagrangian, lagrangian_initial_state, rollout_discrete,
    RomTrajectory, Scheme,
};
use crate::synth_fom::SnapshotSet;

/// `‖Y − Ŷ‖_F / ‖Y‖_F`.
pub fn relative_output_error(y: &DMatrix<f64>, yhat: &DMatrix<f64>) -> Result<f64> {
    if y.shape() != yhat.shape() {
        return Err(shape_mismatch("relative_output_error", y.shape(), yhat.shape()));
    }
    let denom = y.norm();
    if denom == 0.0 {
        return Err(RomError::ZeroReference);
    }
    Ok((y - yhat).norm() / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lopinf,
    Dmdc,
    EraOkid,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Lopinf, Method::Dmdc, Method::EraOkid];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Lopinf => "lopinf",
            Method::Dmdc => "dmdc",
            Method::EraOkid => "era_okid",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = RomError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lopinf" => Ok(Method::Lopinf),
            "dmdc" => Ok(Method::Dmdc),
            "era_okid" => Ok(Method::EraOkid),
            other => Err(RomError::InvalidConfig(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Train,
    Test,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Train => "train",
            Regime::Test => "test",
        }
    }
}

/// Knobs for all three learners.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodSettings {
    pub lopinf: LopinfSettings,
    /// DMDc input-space truncation; `None` uses `r + m`.
    pub p_trunc: Option<usize>,
    pub era: EraSettings,
    pub scheme: Scheme,
}


/// A fitted ROM of any of the three kinds.
#[derive(Debug, Clone)]
pub enum TrainedRom {
    Lagrangian {
        rom: LagrangianRom,
        basis: PodBasis,
        diagnostics: FitDiagnostics,
    },
    Discrete(DiscreteLtiRom),
}

impl TrainedRom {
    pub fn method(&self) -> Method {
        match self {
            TrainedRom::Lagrangian { .. } => Method::Lopinf,
            TrainedRom::Discrete(rom) => match rom.kind {
                crate::dmdc::DiscreteKind::Dmdc => Method::Dmdc,
                crate::dmdc::DiscreteKind::EraOkid => Method::EraOkid,
            },
        }
    }

    pub fn r(&self) -> usize {
        match self {
            TrainedRom::Lagrangian { rom, .. } => rom.r,
            TrainedRom::Discrete(rom) => rom.r(),
        }
    }

    /// Rolls the ROM out from the episode's initial condition, driven by
    /// `u` (which may be longer than the episode itself).
    pub fn predict_with_input(
        &self,
        episode: &SnapshotSet,
        u: &DMatrix<f64>,
        settings: &MethodSettings,
    ) -> Result<RomTrajectory> {
        match self {
            TrainedRom::Lagrangian { rom, basis, .. } => {
                let (q0, v0) = lagrangian_initial_state(basis, episode, settings.lopinf.fd_order)?;
                integrate_lagrangian(rom, &q0, &v0, u, episode.dt, settings.scheme)
            }
            TrainedRom::Discrete(rom) => {
                let x0 = discrete_initial_state(rom, episode)?;
                rollout_discrete(rom, &x0, u)
            }
        }
    }

    pub fn predict(&self, episode: &SnapshotSet, settings: &MethodSettings) -> Result<RomTrajectory> {
        self.predict_with_input(episode, &episode.u, settings)
    }
}

/// Training data with the expensive factorizations done once, so ROMs of
/// several reduced dimensions can be fitted cheaply.
pub enum Trainer {
    Lopinf {
        spectrum: PodSpectrum,
        episodes: Vec<SnapshotSet>,
        settings: LopinfSettings,
    },
    Dmdc {
        data: DmdcData,
        episodes: Vec<SnapshotSet>,
        p_trunc: Option<usize>,
    },
    EraOkid {
        model: EraModel,
    },
}

impl Trainer {
    pub fn prepare(method: Method, train: &[&SnapshotSet], settings: &MethodSettings) -> Result<Self> {
        if train.is_empty() {
            return Err(RomError::InvalidConfig("no training episodes".into()));
        }
        let episodes: Vec<SnapshotSet> = train.iter().map(|&ep| ep.clone()).collect();
        match method {
            Method::Lopinf => {
                let q = linalg::hcat(&train.iter().map(|ep| &ep.q).collect::<Vec<_>>());
                Ok(Trainer::Lopinf {
                    spectrum: PodSpectrum::new(&q)?,
                    episodes,
                    settings: settings.lopinf,
                })
            }
            Method::Dmdc => Ok(Trainer::Dmdc {
                data: DmdcData::from_episodes(train)?,
                episodes,
                p_trunc: settings.p_trunc,
            }),
            Method::EraOkid => {
                if train.len() != 1 {
                    return Err(RomError::MultiEpisodeUnsupported { episodes: train.len() });
                }
                let ep = train[0];
                Ok(Trainer::EraOkid {
                    model: prepare_era(&ep.u, &ep.y, ep.dt, &settings.era)?,
                })
            }
        }
    }

    pub fn max_r(&self) -> usize {
        match self {
            Trainer::Lopinf { spectrum, .. } => spectrum.max_rank(),
            Trainer::Dmdc { data, .. } => data.max_r(),
            Trainer::EraOkid { model } => model.max_order(),
        }
    }

    pub fn fit(&self, r: usize) -> Result<TrainedRom> {
        match self {
            Trainer::Lopinf {
                spectrum,
                episodes,
                settings,
            } => {
                let basis = spectrum.basis(RankSelector::Rank(r))?;
                let refs: Vec<&SnapshotSet> = episodes.iter().collect();
                let (rom, diagnostics) = fit_lopinf(&refs, &basis, &format!("pod_r{r}"), settings)?;
                Ok(TrainedRom::Lagrangian {
                    rom,
                    basis,
                    diagnostics,
                })
            }
            Trainer::Dmdc {
                data,
                episodes,
                p_trunc,
            } => {
                let refs: Vec<&SnapshotSet> = episodes.iter().collect();
                Ok(TrainedRom::Discrete(fit_dmdc_episodes(data, &refs, r, *p_trunc)?))
            }
            Trainer::EraOkid { model } => Ok(TrainedRom::Discrete(model.realize(r)?)),
        }
    }
}

/// How training and test data are drawn.
#[derive(Debug, Clone)]
pub enum Protocol<'a> {
    /// Train on the first `train_len` columns of one episode; one continued
    /// rollout covers the whole episode and is split at `train_len`.
    Extrapolation {
        episode: &'a SnapshotSet,
        train_len: usize,
    },
    /// Train on whole episodes, test on others.
    Episodes {
        train: Vec<&'a SnapshotSet>,
        test: Vec<&'a SnapshotSet>,
    },
}

/// One reduced dimension of a sweep. Errors are `None` when fitting or the
/// rollout failed; `failure` then carries the error code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub r: usize,
    pub train_error: Option<f64>,
    pub test_error: Option<f64>,
    pub failure: Option<String>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Errors of one fitted ROM on the protocol's train and test data.
pub fn protocol_errors(
    rom: &TrainedRom,
    protocol: &Protocol<'_>,
    settings: &MethodSettings,
) -> Result<(f64, Option<f64>)> {
    match protocol {
        Protocol::Extrapolation { episode, train_len } => {
            let traj = rom.predict(episode, settings)?;
            let k = episode.k();
            let train = relative_output_error(
                &episode.y.columns(0, *train_len).into_owned(),
                &traj.yhat.columns(0, *train_len).into_owned(),
            )?;
            let test = if *train_len < k {
                Some(relative_output_error(
                    &episode.y.columns(*train_len, k - train_len).into_owned(),
                    &traj.yhat.columns(*train_len, k - train_len).into_owned(),
                )?)
            } else {
                None
            };
            Ok((train, test))
        }
        Protocol::Episodes { train, test } => {
            let train_err = pooled_error(rom, train, settings)?;
            let test_err = if test.is_empty() {
                None
            } else {
                Some(pooled_error(rom, test, settings)?)
            };
            Ok((train_err, test_err))
        }
    }
}

/// Relative error over the column-wise concatenation of several episodes.
fn pooled_error(rom: &TrainedRom, episodes: &[&SnapshotSet], settings: &MethodSettings) -> Result<f64> {
    let mut ys = Vec::with_capacity(episodes.len());
    let mut yhats = Vec::with_capacity(episodes.len());
    for ep in episodes {
        ys.push(ep.y.clone());
        yhats.push(rom.predict(ep, settings)?.yhat);
    }
    relative_output_error(
        &linalg::hcat(&ys.iter().collect::<Vec<_>>()),
        &linalg::hcat(&yhats.iter().collect::<Vec<_>>()),
    )
}

impl Protocol<'_> {
    /// Training episodes as seen by the learners.
    pub fn training_set(&self) -> Result<Vec<SnapshotSet>> {
        match self {
            Protocol::Extrapolation { episode, train_len } => {
                if *train_len < 2 || *train_len > episode.k() {
                    return Err(RomError::InvalidConfig(format!(
                        "training length {train_len} outside 2..={}",
                        episode.k()
                    )));
                }
                Ok(vec![episode.columns(0, *train_len)?])
            }
            Protocol::Episodes { train, .. } => Ok(train.iter().map(|&ep| ep.clone()).collect()),
        }
    }
}

/// Trains once per reduced dimension and evaluates train and test errors.
/// Ranks beyond what the data supports are rejected up front; failures at a
/// valid rank are recorded in the corresponding point.
pub fn sweep_r(
    protocol: &Protocol<'_>,
    method: Method,
    r_values: &[usize],
    settings: &MethodSettings,
) -> Result<Vec<SweepPoint>> {
    let train = protocol.training_set()?;
    let refs: Vec<&SnapshotSet> = train.iter().collect();
    let trainer = Trainer::prepare(method, &refs, settings)?;
    sweep_trainer(&trainer, protocol, r_values, settings)
}

/// As [`sweep_r`] with the training data already prepared.
pub fn sweep_trainer(
    trainer: &Trainer,
    protocol: &Protocol<'_>,
    r_values: &[usize],
    settings: &MethodSettings,
) -> Result<Vec<SweepPoint>> {
    let max = trainer.max_r();
    if let Some(&bad) = r_values.iter().find(|&&r| r == 0 || r > max) {
        return Err(RomError::RankTooLarge { requested: bad, max });
    }
    let points = r_values
        .par_iter()
        .map(|&r| {
            let outcome = trainer
                .fit(r)
                .and_then(|rom| protocol_errors(&rom, protocol, settings));
            match outcome {
                Ok((train_error, test_error)) => SweepPoint {
                    r,
                    train_error: finite(train_error),
                    test_error: test_error.and_then(finite),
                    failure: None,
                },
                Err(e) => SweepPoint {
                    r,
                    train_error: None,
                    test_error: None,
                    failure: Some(e.code().to_string()),
                },
            }
        })
        .collect();
    Ok(points)
}

/// Reduced dimension with the smallest training error (smallest `r` on ties).
pub fn best_by_training(sweep: &[SweepPoint]) -> Option<usize> {
    sweep
        .iter()
        .filter_map(|p| p.train_error.map(|e| (e, p.r)))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, r)| r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodErrors {
    pub r: usize,
    /// `None` marks a rollout that left the finite range.
    pub per_episode: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub regime: Regime,
    pub per_method: BTreeMap<Method, MethodErrors>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sweep: Option<BTreeMap<Method, Vec<SweepPoint>>>,
}

impl ErrorReport {
    pub fn new(regime: Regime) -> Self {
        ErrorReport {
            regime,
            per_method: BTreeMap::new(),
            sweep: None,
        }
    }

    /// Long-format rows `method,r,episode,regime,error`; sweep entries use
    /// the episode label `sweep`. Failed cells have an empty error field.
    pub fn csv_rows(&self) -> Vec<String> {
        let fmt_err = |e: Option<f64>| e.map(|v| format!("{v:.17e}")).unwrap_or_default();
        let mut rows = Vec::new();
        for (method, errors) in &self.per_method {
            for (episode, err) in &errors.per_episode {
                rows.push(format!(
                    "{method},{},{episode},{},{}",
                    errors.r,
                    self.regime.as_str(),
                    fmt_err(*err)
                ));
            }
        }
        if let Some(sweep) = &self.sweep {
            for (method, points) in sweep {
                for p in points {
                    rows.push(format!("{method},{},sweep,train,{}", p.r, fmt_err(p.train_error)));
                    rows.push(format!("{method},{},sweep,test,{}", p.r, fmt_err(p.test_error)));
                }
            }
        }
        rows
    }
}

pub const CSV_HEADER: &str = "method,r,episode,regime,error";

/// Joined CSV of several reports with a header line.
pub fn reports_to_csv(reports: &[&ErrorReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for report in reports {
        for row in report.csv_rows() {
            out.push_str(&row);
            out.push('\n');
        }
    }
    out
}

/// Per-episode errors of one ROM.
pub fn episode_errors(
    rom: &TrainedRom,
    episodes: &[&SnapshotSet],
    settings: &MethodSettings,
) -> Result<MethodErrors> {
    let mut per_episode = BTreeMap::new();
    for ep in episodes {
        let err = match rom.predict(ep, settings) {
            Ok(traj) => finite(relative_output_error(&ep.y, &traj.yhat)?),
            Err(RomError::NonFiniteState { .. }) => None,
            Err(e) => return Err(e),
        };
        per_episode.insert(ep.episode_id.clone(), err);
    }
    Ok(MethodErrors {
        r: rom.r(),
        per_episode,
    })
}

/// Selected output rows of a trajectory against time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSlice {
    pub t: Vec<f64>,
    pub indices: Vec<usize>,
    /// One row per selected index.
    pub values: Vec<Vec<f64>>,
}

impl OutputSlice {
    /// CSV with a `t` column followed by one `y<index>` column per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in &self.indices {
            out.push_str(&format!(",y{i}"));
        }
        out.push('\n');
        for (k, t) in self.t.iter().enumerate() {
            out.push_str(&format!("{t:.17e}"));
            for row in &self.values {
                out.push_str(&format!(",{:.17e}", row[k]));
            }
            out.push('\n');
        }
        out
    }
}

pub fn output_slice(traj: &RomTrajectory, indices: &[usize]) -> Result<OutputSlice> {
    let p = traj.yhat.nrows();
    let mut values = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= p {
            return Err(RomError::DimensionMismatch {
                context: "output_slice index",
                expected: format!("< {p}"),
                got: i.to_string(),
            });
        }
        values.push(traj.yhat.row(i).iter().copied().collect());
    }
    Ok(OutputSlice {
        t: traj.t.clone(),
        indices: indices.to_vec(),
        values,
    })
}
