//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite values in gradient block `{block}`")]
    NonFinite { block: &'static str },

    #[error("optimizer state does not match the rule base; reinitialize it after a structure change")]
    StaleOptimizer,

    #[error("rule base already holds the maximum of {max} rules")]
    AtCapacity { max: usize },

    #[error("column `{0}` not found in CSV header")]
    MissingColumn(String),

    #[error("column `{0}` is constant; remove it before standardization")]
    ConstantColumn(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
