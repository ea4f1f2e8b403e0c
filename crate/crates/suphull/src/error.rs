//! Error type shared by every module.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{family} has no finite moment of order {order}")]
    InfiniteMoment { family: String, order: f64 },

    #[error("unsupported family: {0}")]
    UnsupportedFamily(String),

    #[error("the truncated-moment sum exceeds every threshold up to the cap {cap}")]
    DivergingSum { cap: f64 },

    #[error("linear program failed: {0}")]
    LinearProgram(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("assertion `{name}` failed: {detail}")]
    FailedAssertion { name: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
