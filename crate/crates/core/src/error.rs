use std::path::PathBuf;

use thiserror::Error;

use crate::optimizers::TrajectoryRecord;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument or configuration field was violated.
    #[error("invalid argument `{field}`: {message}")]
    InvalidArgument { field: String, message: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The objective produced a non-finite value.
    #[error("non-finite fitness {value} at {point:?}")]
    Evaluation { point: Vec<f64>, value: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidArgument {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Name of the offending field for validation failures.
    pub fn field(&self) -> Option<&str> {
        match self {
            Error::InvalidArgument { field, .. } => Some(field),
            _ => None,
        }
    }
}

/// An optimizer run that stopped early. Carries every record produced before
/// the failing step.
#[derive(Debug, Error)]
#[error("run aborted after {} records: {cause}", partial.len())]
pub struct RunError {
    #[source]
    pub cause: Error,
    pub partial: Vec<TrajectoryRecord>,
}
