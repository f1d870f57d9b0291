//! Error type shared by every module in the crate.
//!
//! The variants map onto the process exit codes the CLI uses: validation,
//! format and corruption problems are all input errors (exit 3), numeric
//! failures (non-finite values, eigensolver non-convergence) are exit 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SbsError {
    /// Input violates a contract (shape mismatch, bad range, non-bijective
    /// permutation, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A file does not start with the expected magic/version.
    #[error("format error: {0}")]
    Format(String),

    /// A file has the right header but the payload is truncated or has
    /// trailing garbage.
    #[error("corrupt file: {0}")]
    Corruption(String),

    /// A coordinate or slot index is out of range.
    #[error("index out of range: {0}")]
    Index(String),

    /// A computation produced or encountered a non-finite value, or an
    /// iterative solver failed to converge.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SbsError>;

impl SbsError {
    pub fn validation(msg: impl Into<String>) -> Self {
        SbsError::Validation(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        SbsError::Format(msg.into())
    }

    pub fn corruption(msg: impl Into<String>) -> Self {
        SbsError::Corruption(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        SbsError::Numeric(msg.into())
    }
}
