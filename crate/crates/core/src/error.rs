//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MgwError {
    #[error("model error: {0}")]
    Model(String),

    #[error("power iteration did not converge within {0} iterations")]
    NonConvergence(usize),

    #[error("tree error: {0}")]
    Tree(String),

    #[error("sampler error: {0}")]
    Sampler(String),

    #[error("walk error: {0}")]
    Walk(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("statistics error: {0}")]
    Stats(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MgwError>;
