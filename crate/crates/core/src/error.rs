//! Error type shared across the core crate.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("unknown class token `{0}` (expected one of akiec, bcc, bkl, df, mel, nv, vasc)")]
    UnknownClass(String),

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("metadata row {row}: {msg}")]
    Metadata { row: usize, msg: String },

    #[error("duplicate image_id `{0}` in manifest")]
    DuplicateId(String),

    #[error("{} image file(s) missing: {}", ids.len(), ids.join(", "))]
    MissingImages { ids: Vec<String> },

    #[error("record `{0}` not admitted by task: base class `{1}` outside the task's class map")]
    NotAdmitted(String, String),

    #[error("split ratios must be positive and sum to 1 (got {0:?})")]
    BadRatios([f64; 3]),

    #[error("fold count k={k} exceeds record count {n}")]
    TooManyFolds { k: usize, n: usize },

    #[error("fold count k must be at least 2 (got {0})")]
    BadFoldCount(usize),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("label `{0}` not in class list")]
    UnknownLabel(String),

    #[error("confusion matrix must be 2x2 for binary metrics (got {0}x{0})")]
    NotBinary(usize),

    #[error("ROC AUC undefined: {0}")]
    UndefinedAuc(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io { path: path.into(), source }
    }

    pub fn image(path: impl Into<PathBuf>, err: impl ToString) -> Self {
        CoreError::Image { path: path.into(), msg: err.to_string() }
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
