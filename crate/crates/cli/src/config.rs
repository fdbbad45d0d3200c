//! Experiment configuration shared by all commands.

use std::path::{Path, PathBuf};

use romkit::era_okid::{EraSettings, DEFAULT_SOLUTION_RCOND};
use romkit::lopinf::{LopinfSettings, SolverOptions};
use romkit::metrics::{Method, MethodSettings};
use romkit::romsim::Scheme;
use romkit::synth_fom::FomConfig;
use romkit::tdiff::FdOrder;
use romkit::RomError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::read_json;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum MethodChoice {
    Lopinf,
    Dmdc,
    EraOkid,
    All,
}

impl MethodChoice {
    pub fn methods(self) -> Vec<Method> {
        match self {
            MethodChoice::Lopinf => vec![Method::Lopinf],
            MethodChoice::Dmdc => vec![Method::Dmdc],
            MethodChoice::EraOkid => vec![Method::EraOkid],
            MethodChoice::All => Method::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSpec {
    pub count: usize,
    /// Per-episode input seeds; `None` uses `fom.seed·1000 + i` for episode `i`.
    pub seeds: Option<Vec<u64>>,
    pub amplitude: f64,
    pub hold_steps: usize,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        EpisodeSpec {
            count: 6,
            seeds: None,
            amplitude: 10.0,
            hold_steps: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub rom_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_dir: "data".into(),
            rom_dir: "roms".into(),
            report_dir: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub fom: FomConfig,
    pub episodes: EpisodeSpec,
    /// One-based episode numbers.
    pub train_episodes: Vec<usize>,
    pub test_episodes: Vec<usize>,
    pub method: MethodChoice,
    pub r: usize,
    /// When set, `train` picks the entry with the lowest training error.
    pub r_sweep: Option<Vec<usize>>,
    pub spd_floor: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub fd_order: FdOrder,
    pub skip_input_switches: bool,
    pub output_ridge: f64,
    pub p_trunc: Option<usize>,
    pub q_obs: usize,
    pub markov_len: Option<usize>,
    pub regression_rcond: f64,
    pub alpha: Option<usize>,
    pub beta: Option<usize>,
    pub scheme: Scheme,
    pub centering: bool,
    pub paths: Paths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let solver = SolverOptions::default();
        let era = EraSettings::default();
        ExperimentConfig {
            fom: FomConfig::default(),
            episodes: EpisodeSpec::default(),
            train_episodes: vec![1, 2],
            test_episodes: vec![3, 4, 5, 6],
            method: MethodChoice::All,
            r: 20,
            r_sweep: None,
            spd_floor: solver.spd_floor,
            tol: solver.tol,
            max_iters: solver.max_iters,
            fd_order: FdOrder::EIGHTH,
            skip_input_switches: true,
            output_ridge: 0.0,
            p_trunc: None,
            q_obs: era.q_obs,
            markov_len: None,
            regression_rcond: DEFAULT_SOLUTION_RCOND,
            alpha: None,
            beta: None,
            scheme: Scheme::NewmarkTrapezoid,
            centering: false,
            paths: Paths::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> RomError {
    RomError::InvalidConfig(msg.into())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn validate(&self) -> std::result::Result<(), RomError> {
        self.fom.validate()?;
        let ep = &self.episodes;
        if ep.count == 0 {
            return Err(invalid("episodes.count must be positive"));
        }
        if let Some(seeds) = &ep.seeds {
            if seeds.len() != ep.count {
                return Err(invalid(format!(
                    "episodes.seeds has {} entries for {} episodes",
                    seeds.len(),
                    ep.count
                )));
            }
        }
        if !(ep.amplitude >= 0.0 && ep.amplitude.is_finite()) {
            return Err(invalid("episodes.amplitude must be finite and nonnegative"));
        }
        if ep.hold_steps == 0 {
            return Err(invalid("episodes.hold_steps must be positive"));
        }
        if self.train_episodes.is_empty() {
            return Err(invalid("train_episodes is empty"));
        }
        for (name, list) in [("train_episodes", &self.train_episodes), ("test_episodes", &self.test_episodes)] {
            if let Some(&bad) = list.iter().find(|&&i| i == 0 || i > ep.count) {
                return Err(invalid(format!("{name} references episode {bad}, valid range 1..={}", ep.count)));
            }
        }
        if let Some(&both) = self.train_episodes.iter().find(|i| self.test_episodes.contains(i)) {
            return Err(invalid(format!("episode {both} is both a training and a test episode")));
        }
        if self.r == 0 || self.r_sweep.as_ref().is_some_and(|s| s.is_empty() || s.contains(&0)) {
            return Err(invalid("reduced dimensions must be positive"));
        }
        Ok(())
    }

    /// Input seed of the one-based episode `i`.
    pub fn episode_seed(&self, i: usize) -> u64 {
        match &self.episodes.seeds {
            Some(seeds) => seeds[i - 1],
            None => self.fom.seed * 1000 + i as u64,
        }
    }

    pub fn method_settings(&self) -> MethodSettings {
        MethodSettings {
            lopinf: LopinfSettings {
                solver: SolverOptions {
                    spd_floor: self.spd_floor,
                    max_iters: self.max_iters,
                    tol: self.tol,
                },
                fd_order: self.fd_order,
                use_exact_velocity: false,
                skip_input_switches: self.skip_input_switches,
                output_ridge: self.output_ridge,
            },
            p_trunc: self.p_trunc,
            era: EraSettings {
                q_obs: self.q_obs,
                markov_len: self.markov_len,
                regression_rcond: self.regression_rcond,
                alpha: self.alpha,
                beta: self.beta,
            },
            scheme: self.scheme,
        }
    }

    /// SHA-256 of the canonical JSON of every field except `paths`.
    pub fn config_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("paths");
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
