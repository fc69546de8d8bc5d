//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("unknown task '{0}'")]
    UnknownTask(String),

    #[error("incompatible snapshot: {0}")]
    Snapshot(String),

    #[error("state error: {0}")]
    State(String),

    #[error("ordering error: {0}")]
    Ordering(String),

    #[error("terminal state: {0}")]
    Terminal(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite value in loss term '{term}' at step {step}")]
    NonFinite { term: String, step: u64 },

    #[error("curriculum stalled on task '{task}' after {steps} steps ({detail})")]
    Stall {
        task: String,
        steps: u64,
        detail: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}
