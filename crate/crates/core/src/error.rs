//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A quantity was requested outside the support of a density estimate.
    #[error("out of support: {0}")]
    OutOfSupport(String),

    /// Inputs that must refer to the same underlying model do not.
    #[error("inconsistent input: {0}")]
    InconsistentInput(String),

    /// The dressed spectrum carries (near-)degenerate levels where the
    /// stationary-state construction assumes none.
    #[error("degenerate dressed spectrum: {0}")]
    DegenerateSpectrum(String),

    /// An eigensolver or other numerical kernel failed to converge.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
