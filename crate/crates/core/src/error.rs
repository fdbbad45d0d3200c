use thiserror::Error;

/// Errors raised by the model-reduction pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RomError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("Newton solve failed at step {step} after {iterations} iterations (residual {residual:e})")]
    NewtonDivergence {
        step: usize,
        iterations: usize,
        residual: f64,
    },
    #[error("non-finite state encountered at step {step}")]
    NonFiniteState { step: usize },
    #[error("snapshot matrix is identically zero")]
    ZeroMatrix,
    #[error("requested rank {requested} exceeds the maximum {max}")]
    RankTooLarge { requested: usize, max: usize },
    #[error("too few snapshots: need at least {needed}, got {got}")]
    TooFewSnapshots { needed: usize, got: usize },
    #[error("insufficient snapshots: need at least {needed}, got {got}")]
    InsufficientSnapshots { needed: usize, got: usize },
    #[error("regression data is rank deficient: {0}")]
    RankDeficientData(String),
    #[error("OKID regression is rank deficient: rank {rank} < required {required}")]
    RankDeficientRegression { rank: usize, required: usize },
    #[error("retained singular value ratio {ratio:e} is below the threshold {threshold:e}")]
    SingularTruncation { ratio: f64, threshold: f64 },
    #[error("reference output has zero norm")]
    ZeroReference,
    #[error("ERA/OKID identifies from a single zero-initial-state record; got {episodes} training episodes")]
    MultiEpisodeUnsupported { episodes: usize },
}

impl RomError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            RomError::InvalidConfig(_) => "InvalidConfig",
            RomError::DimensionMismatch { .. } => "DimensionMismatch",
            RomError::NewtonDivergence { .. } => "NewtonDivergence",
            RomError::NonFiniteState { .. } => "NonFiniteState",
            RomError::ZeroMatrix => "ZeroMatrix",
            RomError::RankTooLarge { .. } => "RankTooLarge",
            RomError::TooFewSnapshots { .. } => "TooFewSnapshots",
            RomError::InsufficientSnapshots { .. } => "InsufficientSnapshots",
            RomError::RankDeficientData(_) => "RankDeficientData",
            RomError::RankDeficientRegression { .. } => "RankDeficientRegression",
            RomError::SingularTruncation { .. } => "SingularTruncation",
            RomError::ZeroReference => "ZeroReference",
            RomError::MultiEpisodeUnsupported { .. } => "MultiEpisodeUnsupported",
        }
    }
}

pub type Result<T> = std::result::Result<T, RomError>;

pub(crate) fn shape_mismatch(
    context: &'static str,
    expected: (usize, usize),
    got: (usize, usize),
) -> RomError {
    RomError::DimensionMismatch {
        context,
        expected: format!("{}x{}", expected.0, expected.1),
        got: format!("{}x{}", got.0, got.1),
    }
}
