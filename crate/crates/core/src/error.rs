//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("world too cluttered: no collision-free placement after {retries} attempts")]
    PlacementFailed { retries: usize },

    #[error("empty valid-pixel mask: no supervision signal")]
    EmptyMask,

    #[error("training diverged (non-finite {quantity} at step {step})")]
    Diverged { quantity: String, step: u64 },

    #[error("episode already finished; reset before stepping")]
    EpisodeFinished,

    #[error("latent dimension mismatch: policy expects J={expected}, encoder has J={actual}")]
    LatentDimMismatch { expected: usize, actual: usize },

    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image decode error: {0}")]
    Image(String),
}

impl Error {
    pub fn format(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
