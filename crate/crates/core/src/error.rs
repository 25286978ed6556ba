//! Error type shared across the library.

use thiserror::Error;

/// Errors produced by panel ingestion, model fitting, and evaluation.
#[derive(Debug, Error)]
pub enum CoreError {
    /// The input data could not be read or parsed.
    #[error("data error: {0}")]
    Data(String),

    /// The inputs were readable but fail a structural or numerical
    /// precondition (wrong dimensions, empty donor pool, non-finite values).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// An iterative procedure failed to converge within its budget.
    #[error("convergence failure: {0}")]
    Convergence(String),

    /// A numerical operation that should always succeed did not
    /// (e.g. a Cholesky factorisation of a matrix that must be positive
    /// definite under the documented preconditions).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CoreError {
    /// Convenience constructor for [`CoreError::Data`].
    pub fn data(msg: impl Into<String>) -> Self {
        CoreError::Data(msg.into())
    }

    /// Convenience constructor for [`CoreError::Invalid`].
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::Invalid(msg.into())
    }

    /// Convenience constructor for [`CoreError::Convergence`].
    pub fn convergence(msg: impl Into<String>) -> Self {
        CoreError::Convergence(msg.into())
    }

    /// Convenience constructor for [`CoreError::Numerical`].
    pub fn numerical(msg: impl Into<String>) -> Self {
        CoreError::Numerical(msg.into())
    }
}

impl From<std::io::Error> for CoreError {
    fn from(e: std::io::Error) -> Self {
        CoreError::Data(format!("io: {e}"))
    }
}

impl From<csv::Error> for CoreError {
    fn from(e: csv::Error) -> Self {
        CoreError::Data(format!("csv: {e}"))
    }
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CoreError>;
