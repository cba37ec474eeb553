//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SparcError {
    /// A constructor or operation was given parameters outside its domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Vector or matrix dimensions do not line up.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// Refused to materialize an explicit design matrix above the size cap.
    #[error("explicit design matrix with {entries} entries exceeds cap of {cap}")]
    SizeCapExceeded { entries: u128, cap: u128 },

    /// The AMP recursion produced a non-finite value.
    #[error("decoder diverged at iteration {iteration}")]
    DecoderDiverged { iteration: usize },

    /// A message vector violates the one-PSK-nonzero-per-section structure.
    #[error("malformed message vector: {0}")]
    MalformedMessage(String),

    /// A block weight passed to the weighted adjoint was non-finite or negative.
    #[error("invalid block weight: {0}")]
    InvalidWeight(String),

    /// A quantity could not be computed; the reason is reported verbatim.
    #[error("{what} unavailable: {reason}")]
    Unavailable { what: &'static str, reason: String },
}

impl SparcError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        SparcError::InvalidParameter(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, SparcError>;
