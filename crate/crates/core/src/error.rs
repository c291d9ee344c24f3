//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// `InvalidInput` covers rejected arguments and configuration (exit code 1 in
/// the CLI); `Numerical` covers solver non-convergence and invariant breaches
/// discovered at run time (exit code 2).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Serde(_) | Error::Io(_) => 1,
            Error::Numerical(_) => 2,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
