use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A documented precondition does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Too little data to run an estimator.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// The optimizer left (or could not enter) its constraint set.
    #[error("constraint violation: {0}")]
    Constraint(String),

    /// Numerical integration produced a non-finite state.
    #[error("integration failure at step {step}: {message}")]
    Integration { step: usize, message: String },

    /// A configuration file failed to parse or validate.
    #[error("config error: {0}")]
    Config(String),

    /// Failure reading or writing an external file.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Failure encoding or decoding CSV.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
