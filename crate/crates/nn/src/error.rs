//! Error type for the model crate.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    #[error("input {height}x{width} not divisible by 2^{depth}; pick dimensions that are multiples of {}", 1usize << depth)]
    NotDivisible { height: usize, width: usize, depth: usize },

    #[error("empty {0} set")]
    EmptySet(String),

    #[error("class `{0}` absent from the training set")]
    MissingClass(String),

    #[error("{} record(s) with mask/image size mismatch: {}", ids.len(), ids.join(", "))]
    SizeMismatch { ids: Vec<String> },

    #[error("wrong input size: expected {expected} values, got {got}")]
    WrongInputSize { expected: usize, got: usize },

    #[error(
        "pretrained backbone weights not found at `{0}`; provide a converted weight record \
         there or set `random_init = true` to train from scratch"
    )]
    MissingPretrained(PathBuf),

    #[error("checkpoint digest mismatch: sidecar records {recorded}, configuration hashes to {computed}")]
    DigestMismatch { recorded: String, computed: String },

    #[error("failed to read checkpoint weights at {path}: {msg}")]
    CorruptWeights { path: PathBuf, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Core(#[from] dermpipe_core::CoreError),
}

impl NnError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NnError::Io { path: path.into(), source }
    }
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
