//! Shared error type for the pipeline.

use std::path::PathBuf;

/// Errors produced by parsing, validation, and pipeline stages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed text input (COLMAP files, configs, partition files).
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Structurally invalid binary or image data.
    #[error("format error: {0}")]
    Format(String),

    /// Inputs that are well-formed but violate a documented precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Numeric or geometric degeneracy (singular plane, non-finite value).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Cross-reference violations between records of one model.
    #[error("referential integrity: {0}")]
    Integrity(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse { line, message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by bad input rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
