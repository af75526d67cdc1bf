use thiserror::Error;

/// Errors raised by the matrix kernel and the bound evaluators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: String },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix must be square with dimension >= 1 (got {rows}x{cols})")]
    InvalidShape { rows: usize, cols: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("infeasible distortion: {0}")]
    InfeasibleDistortion(String),

    #[error("auxiliary pair violates the order 0 <= K_X|V <= K_X|U <= K_X: {0}")]
    InvalidOrder(String),

    #[error("channel is not degraded as required: {0}")]
    NotDegraded(String),

    #[error("conditional covariance of V is singular")]
    SingularKv,

    #[error("unknown example '{name}' (valid: {valid})")]
    UnknownExample { name: String, valid: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;
