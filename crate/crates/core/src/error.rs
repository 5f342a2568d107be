use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SdoreError>;

#[derive(Debug, Error)]
pub enum SdoreError {
    /// A caller broke an operation's precondition (shapes, empty input, bad ranges).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("capability error: {0}")]
    Capability(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("parse error in {section}: {message}")]
    Parse { section: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SdoreError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        SdoreError::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SdoreError::Io {
            path: path.into(),
            source,
        }
    }
}
