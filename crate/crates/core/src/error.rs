use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaylorError {
    #[error("parameter count overflows for n = {n}, k = {k}")]
    Range { n: usize, k: usize },
    #[error("arity must be positive, got {0}")]
    InvalidArity(usize),
    #[error("order {0} exceeds the supported maximum")]
    OrderTooHigh(usize),
    #[error("expected {expected} variables, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("expected {expected} coefficients, got {got}")]
    CoefficientCount { expected: usize, got: usize },
    #[error("variable index {index} out of range for arity {arity}")]
    VariableOutOfRange { index: usize, arity: usize },
    #[error("trim flag and trim variable disagree")]
    InconsistentTrim,
    #[error("non-finite parameter")]
    NonFinite,
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormulationError {
    #[error("genome must have {expected} entries, got {got}")]
    GenomeLength { expected: usize, got: usize },
    #[error("non-finite genome entry at {0}")]
    NonFiniteGene(usize),
    #[error("unknown formulation preset `{0}`")]
    UnknownPreset(String),
    #[error("batches must be non-empty with matching widths")]
    BatchShape,
    #[error("gradient penalty weight must be non-negative, got {0}")]
    NegativeLambda(f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("no evaluations have been told yet")]
    NoEvaluations,
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("expected {expected} fitness values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("tell called without a pending ask")]
    NoPendingAsk,
    #[error("optimizer fault: {0}")]
    Fault(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("shape mismatch: expected width {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite parameters after update")]
    NonFinite,
    #[error("invalid network definition: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("metric `{0}` failed")]
    Failed(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Crate-level error.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Taylor(#[from] TaylorError),
    #[error(transparent)]
    Formulation(#[from] FormulationError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("run aborted: {0}")]
    Aborted(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
