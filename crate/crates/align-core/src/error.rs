//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide error enum. The CLI maps `Validation`, `Parse` and `NotFound`
/// to exit code 1 (bad input) and everything else to exit code 2 (runtime).
#[derive(Debug, Error)]
pub enum CoreError {
    /// Caller broke an API contract (shape mismatch, non-scalar loss, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input data failed validation.
    #[error("validation error: {0}")]
    Validation(String),

    /// Malformed input file.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A lookup failed (embedding table miss, unregistered op, ...).
    #[error("not found: {0}")]
    NotFound(String),

    /// A non-finite value appeared during numeric evaluation.
    #[error("numeric error in {op}: {msg}")]
    Numeric { op: String, msg: String },

    /// The remote embedding service misbehaved.
    #[error("provider error: {0}")]
    Provider(String),

    /// A checkpoint file failed its checksum or is truncated.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A checkpoint was written by an unknown format version.
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub fn contract(msg: impl Into<String>) -> Self {
        CoreError::Contract(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CoreError::Validation(msg.into())
    }

    pub fn numeric(op: impl Into<String>, msg: impl Into<String>) -> Self {
        CoreError::Numeric {
            op: op.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad user input rather than a runtime fault.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            CoreError::Validation(_) | CoreError::Parse { .. } | CoreError::NotFound(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
