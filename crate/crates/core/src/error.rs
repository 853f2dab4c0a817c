//! Error taxonomy shared across the crate.
//!
//! The categories map one-to-one onto the CLI exit codes: configuration (1),
//! data (2), numeric (3).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration (bad column names, empty grids,
    /// impossible hyperparameter combinations, missing files).
    #[error("configuration error: {0}")]
    Config(String),

    /// The data violates a contract (non-binary labels, non-numeric cells,
    /// degenerate groups).
    #[error("data error: {0}")]
    Data(String),

    /// A computation produced or received non-finite values, or an iterative
    /// solver failed to converge.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Data(format!("malformed CSV: {other:?}")),
        }
    }
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_) => 2,
            Error::Numeric(_) => 3,
            Error::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
