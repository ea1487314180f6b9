use thiserror::Error;

use crate::loss::LossRecord;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input has too few pixels, or an empty mask where at least one valid pixel is required.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Shapes, channel counts or parameter values violate an operation's preconditions.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported format: {0}")]
    Format(String),

    /// Gradient descent kept increasing the loss after the maximum number of step halvings.
    #[error("optimization diverged after {halvings} step halvings (last step size {step_size:e})")]
    Diverged {
        halvings: u32,
        step_size: f64,
        history: Vec<LossRecord>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn degenerate(msg: impl Into<String>) -> Error {
    Error::Degenerate(msg.into())
}
