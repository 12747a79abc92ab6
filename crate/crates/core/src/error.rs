//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, unknown, or out of range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Operands have incompatible shapes.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A feature vector has (near-)zero norm and cannot be normalized.
    #[error("degenerate feature: {0}")]
    DegenerateFeature(String),

    /// A NaN or infinity showed up where only finite values are valid.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A class or image index is outside the valid range.
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    /// The evaluation protocol preconditions are violated.
    #[error("evaluation error: {0}")]
    Eval(String),

    /// A dataset, checkpoint, or CSV file does not match the expected format.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Coarse classification used by the CLI to pick exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidConfig(_) => ErrorCategory::Config,
            Error::Format(_) | Error::Io(_) | Error::Eval(_) => ErrorCategory::Data,
            Error::DimensionMismatch(_)
            | Error::DegenerateFeature(_)
            | Error::NonFinite(_)
            | Error::IndexOutOfRange(_) => ErrorCategory::Numeric,
        }
    }
}

/// Buckets for process exit codes: config, data, numeric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
}
