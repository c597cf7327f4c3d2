//! Error taxonomy shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed runtime input: shape mismatch, non-finite values.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Problem configuration rejected during load or validation.
    #[error("configuration error ({key}): {message}")]
    Config { key: String, message: String },

    /// Structurally unsolvable system (insufficient constraints etc.).
    #[error("structural error: {0}")]
    Structural(String),

    /// Numerical failure, carrying the residual that was reached.
    #[error("numerical error: {message} (residual {residual:.3e})")]
    Numerical { message: String, residual: f64 },

    /// Request exceeds configured resource limits.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
