use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("undefined direction: vector ({x}, {y}) has zero length")]
    UndefinedDirection { x: f64, y: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
