//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any fallible operation in this crate.
#[derive(Debug, Error)]
pub enum CoclrError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty queue: {0}")]
    EmptyQueue(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: String, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoclrError>;
