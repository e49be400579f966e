//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SisnError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: String,
        got: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error for {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("parse error in {file} line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}, step {step}; last good checkpoint retained")]
    NanLoss { epoch: usize, step: usize },
}

impl SisnError {
    /// Short machine-parsable class tag, used by the CLI error line.
    pub fn class(&self) -> &'static str {
        match self {
            SisnError::ShapeMismatch { .. } => "shape-mismatch",
            SisnError::InvalidConfig(_) => "invalid-config",
            SisnError::InvalidInput(_) => "invalid-input",
            SisnError::Io { .. } => "io",
            SisnError::Image { .. } => "image",
            SisnError::Parse { .. } => "parse",
            SisnError::Checkpoint(_) => "checkpoint",
            SisnError::NanLoss { .. } => "nan-loss",
        }
    }
}

pub type Result<T> = std::result::Result<T, SisnError>;
