use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum StvgError {
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error on `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{0}")]
    Invalid(String),
}

impl StvgError {
    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        StvgError::Validation {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        StvgError::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StvgError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by invalid input data rather than the environment.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            StvgError::Parse { .. } | StvgError::Validation { .. } | StvgError::Dimension { .. }
        )
    }
}

pub type Result<T, E = StvgError> = std::result::Result<T, E>;
