//! Crate-wide error type. Numeric one-off failures (CTC infeasibility,
//! non-finite gradients) have their own variants so callers can branch on
//! them without string matching.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec: {0}")]
    Image(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("label infeasible for sequence length {t}: needs at least {needed} frames")]
    CtcInfeasible { t: usize, needed: usize },

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
