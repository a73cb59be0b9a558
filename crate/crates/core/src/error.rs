use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration or command-line usage.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An input violated a named invariant.
    #[error("validation failed ({invariant}): {detail}")]
    Validation {
        invariant: &'static str,
        detail: String,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Non-finite values appeared during a numeric computation.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("parse error in {origin}: {detail}")]
    Parse { origin: String, detail: String },

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn validation(invariant: &'static str, detail: impl Into<String>) -> Self {
        Error::Validation {
            invariant,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 1 usage/config, 2 validation, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io { .. } => 1,
            Error::Validation { .. } | Error::Dimension { .. } | Error::Parse { .. } => 2,
            Error::Numeric(_) => 3,
        }
    }
}
