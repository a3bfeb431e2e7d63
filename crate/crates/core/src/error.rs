//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration values (dimensions, fractions, hyperparameters).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Array or vector shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A forward cache does not match the network or batch it is used with.
    #[error("stale forward cache: {0}")]
    Cache(String),

    /// Non-finite values encountered during numeric work.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// An API contract was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed input file (header, row length, unparsable field).
    #[error("format error: {0}")]
    Format(String),

    /// A parsed value is outside its allowed domain.
    #[error("validation error at row {row}, column {column}: {message}")]
    Validation {
        row: usize,
        column: String,
        message: String,
    },

    /// Evaluation was requested on an empty split or batch.
    #[error("empty evaluation: {0}")]
    EmptyEvaluation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors a user can fix by editing configuration or inputs.
    pub fn is_config_like(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Shape(_) | Error::Format(_) | Error::Validation { .. }
        )
    }
}
