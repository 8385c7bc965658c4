use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite entry at index {0}")]
    NonFinite(usize),

    #[error("matrix is not positive definite (jitter ladder exhausted)")]
    NotPositiveDefinite,

    #[error("matrix is singular to working precision")]
    Singular,

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("matrix exponential overflowed")]
    Overflow,

    #[error("coordinate {coord} out of range for dimension {dim}")]
    InvalidCoordinate { coord: usize, dim: usize },

    #[error("duplicate derivative functional (center {index}, coord {coord})")]
    DuplicateFunctional { index: usize, coord: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("trace too short: need {needed} records, have {available}")]
    InsufficientTrace { needed: usize, available: usize },

    #[error("sample is empty")]
    EmptySample,

    #[error("operation requires a quadratic Hamiltonian")]
    NotQuadratic,

    #[error("snapshot matrix rank deficient at requested rank {rank}")]
    RankDeficient { rank: usize },

    #[error("too many snapshots: {0} (at most 64 supported)")]
    TooManySnapshots(usize),

    #[error("sampling filter too tight: {accepted} accepted out of {draws} draws")]
    FilterTooTight { accepted: usize, draws: usize },

    #[error("too few samples to split: {0}")]
    TooFewSamples(usize),

    #[error("separability diagnostic requires a one-degree-of-freedom dataset (got n = {0})")]
    NotOneDof(usize),

    #[error("time grids are incompatible: {0}")]
    GridMismatch(String),

    #[error("no series to plot")]
    EmptySeries,

    #[error("every model-selection candidate failed")]
    AllCandidatesFailed,

    #[error("step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sample {index} failed: {source}")]
    SampleFailed {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(expected: usize, found: usize) -> Self {
        Error::DimensionMismatch { expected, found }
    }

    pub(crate) fn at_step(step: usize, source: Error) -> Self {
        Error::StepFailed { step, source: Box::new(source) }
    }

    pub(crate) fn at_sample(index: usize, source: Error) -> Self {
        Error::SampleFailed { index, source: Box::new(source) }
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::dim(expected, found))
    }
}
