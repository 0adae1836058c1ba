use thiserror::Error;

/// Errors produced by solvers, validators and ingestion routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Inputs violate a documented precondition (bad values, infeasible config).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Matrix/vector shapes are inconsistent.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An iterative routine broke down numerically (underflow, empty kernel row, ...).
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// A matrix that must be invertible (or well-conditioned) is not.
    #[error("singular input: {0}")]
    SingularInput(String),

    /// A text artifact (embedding table, dictionary) could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::NumericalFailure(msg.into())
    }
}
