use thiserror::Error;

/// Errors raised by the simulator library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite entry {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("preconditioner diagonal must be positive, found {value} at index {index}")]
    NonPositiveDiagonal { index: usize, value: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("gamma condition violated: 1/gamma = {inv_gamma} < 2*tau/lambda_min(H) = {required}")]
    GammaCondition { inv_gamma: f64, required: f64 },

    #[error("prox solver hit iteration cap {iterations} with residual {residual:e}")]
    ProxNotConverged { iterations: usize, residual: f64 },

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("non-finite state at round {round}, step {step}, worker {worker}")]
    Diverged { round: usize, step: usize, worker: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, Error>;
