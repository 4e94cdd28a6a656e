//! Error type shared across the crate.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("block index {index} out of range (operator has {n_blocks} blocks)")]
    BlockIndexOutOfRange { index: usize, n_blocks: usize },

    #[error("invalid block structure: {0}")]
    BlockStructure(String),

    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error("non-finite kernel value {value} at s={s}, t={t} (row {row}, col {col})")]
    NonFiniteKernel {
        value: f64,
        s: f64,
        t: f64,
        row: usize,
        col: usize,
    },

    #[error("sample path too short: need {needed} indices, path has {available}")]
    PathTooShort { needed: usize, available: usize },

    #[error("ensemble run {run} failed: {source}")]
    EnsembleRun {
        run: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub fn invalid(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    /// The CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::BlockIndexOutOfRange { .. }
                | Error::BlockStructure(_)
                | Error::InvalidParameter { .. }
                | Error::PathTooShort { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
