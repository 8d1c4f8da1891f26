//! Crate-wide error type and exit-code mapping.

use std::path::PathBuf;
use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("input domain: {0}")]
    InputDomain(String),

    /// A computation produced a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A configuration document failed schema validation.
    #[error("config schema: {0}")]
    Schema(String),

    /// Filesystem failure with the offending path attached.
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::InputDomain(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn schema(msg: impl Into<String>) -> Self {
        Error::Schema(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line interface.
    ///
    /// 2 = schema/input violation, 3 = numeric failure, 4 = i/o failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InputDomain(_) | Error::Schema(_) => 2,
            Error::Numeric(_) => 3,
            Error::Io { .. } => 4,
        }
    }
}
