//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by layout handling, estimation, simulation and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A hierarchy definition violates the partition rules.
    #[error("invalid layout: {0}")]
    Layout(String),

    /// A caller-supplied parameter is outside its admissible range.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// Matrix or panel shapes do not line up.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// A cluster or network index is out of range.
    #[error("{what} index {index} out of range (< {bound} required)")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    /// A numerical procedure failed or produced a degenerate result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Underlying file-system error.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization error.
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    /// A data file could not be parsed.
    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },
}

/// Coarse classification used by the CLI to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Validation,
    Numerical,
    Io,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Layout(_)
            | Error::Parameter { .. }
            | Error::Dimension { .. }
            | Error::IndexOutOfRange { .. } => ErrorCategory::Validation,
            Error::Numerical(_) => ErrorCategory::Numerical,
            Error::Io(_) | Error::Json(_) | Error::Parse { .. } => ErrorCategory::Io,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
