use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TaidError>;

#[derive(Debug, Error)]
pub enum TaidError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("out of range: {0}")]
    Range(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("training diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("config error at line {line}, key `{key}`: {reason}")]
    Config {
        line: usize,
        key: String,
        reason: String,
    },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TaidError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        TaidError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TaidError::Io {
            path: path.into(),
            source,
        }
    }
}
