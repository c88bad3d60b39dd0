use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("duplicate points at {0} (distinct points required)")]
    DuplicatePoints(f64),
    #[error("empty data")]
    EmptyData,
    #[error("non-finite value in input")]
    NonFiniteInput,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("beta={beta} is below the feasibility bound {min}; the objective is unbounded below")]
    BetaTooSmall { beta: f64, min: f64 },
    #[error("thresholds are not defined for skip-connection variants")]
    NotApplicable,
    #[error("beta={beta} outside the valid regime ({lo}, {hi}]")]
    BetaOutOfRegime { beta: f64, lo: f64, hi: f64 },
    #[error("|t|={t} exceeds the allowed bound {bound}")]
    TOutOfRange { t: f64, bound: f64 },
    #[error("exhaustive enumeration supports d <= 3, got d={0}")]
    DimensionTooLarge(usize),
    #[error("wedge features need d >= 2, got d={0}")]
    DimensionTooSmall(usize),
    #[error("objective unbounded below: range residual {0:e}")]
    UnboundedObjective(f64),
    #[error("cone split failed (residual {0:e})")]
    SplitInfeasible(f64),
    #[error("epsilon must be positive and finite, got {0}")]
    BadEpsilon(f64),
    #[error("beta must be positive and finite, got {0}")]
    BadBeta(f64),
    #[error("non-finite state in chain {chain} at step {step}")]
    NonFiniteState { chain: usize, step: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
