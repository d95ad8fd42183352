use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Checkpoints or artifacts disagree on layer names or shapes.
    #[error("layer `{layer}`: {reason}")]
    Structure { layer: String, reason: String },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("no candidate group sizes: {0}")]
    EmptyCandidates(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn structure(layer: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Structure {
            layer: layer.into(),
            reason: reason.into(),
        }
    }
}
