use thiserror::Error;

/// Errors surfaced by simulator components.
#[derive(Debug, Error)]
pub enum Error {
    #[error("delay at index {index} must be positive and finite, got {value}")]
    InvalidDelay { index: usize, value: f64 },

    #[error("client selection must not be empty")]
    EmptySelection,

    #[error("client id {0} is out of range for a roster of {1} clients")]
    UnknownClient(usize, usize),

    #[error("missing sampled delay for client {0}")]
    MissingDelay(usize),

    #[error("coefficients do not match the selected clients: {0}")]
    CoefficientMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("linear system is singular: {0}")]
    Singular(String),

    #[error("heterogeneity assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("probability vector invalid: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("training diverged at round {round}: {detail}")]
    Divergence { round: usize, detail: String },

    #[error("trace parse error at line {line}: {msg}")]
    TraceParse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
