//! Crate-wide error type.
//!
//! The variants mirror how failures are reported at the CLI boundary:
//! config errors exit 1, numeric failures exit 2, file/format problems exit 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not match what an operation requires.
    #[error("shape error: {0}")]
    Shape(String),
    /// A parameter or config file value is out of range or unknown.
    #[error("config error: {0}")]
    Config(String),
    /// A serialized artifact (weights, image, kernel, mask) is malformed.
    #[error("format error: {0}")]
    Format(String),
    /// A computation produced non-finite values or an iteration failed to
    /// converge within its budget.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
