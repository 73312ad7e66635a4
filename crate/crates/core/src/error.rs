use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DsnError>;

#[derive(Debug, Error)]
pub enum DsnError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("divisibility violated: {0}")]
    Divisibility(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Divergence {
        epoch: usize,
        batch: usize,
        reason: String,
    },

    #[error("non-finite gradient in parameter update")]
    NonFiniteGradient,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DsnError {
    pub(crate) fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        DsnError::Data {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DsnError::Io {
            path: path.into(),
            source,
        }
    }
}
