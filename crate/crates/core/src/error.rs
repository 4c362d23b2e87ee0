use std::path::PathBuf;

/// Errors produced anywhere in the transmission chain.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint was written for a different {kind} configuration (hash {found}, expected {expected})")]
    ConfigHashMismatch {
        kind: String,
        found: String,
        expected: String,
    },

    #[error("jpeg: {0}")]
    Jpeg(String),

    #[error("missing model: {0}")]
    MissingModel(String),

    #[error("no feature backbone supplied for the perceptual distance")]
    MissingBackbone,

    #[error(transparent)]
    Candle(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
