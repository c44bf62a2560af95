//! CLI error type with process exit-code mapping.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// A required upstream artifact is missing or stale. Exit code 2.
    #[error("{0}")]
    MissingPrecondition(String),

    #[error(transparent)]
    Core(#[from] dermpipe_core::CoreError),

    #[error(transparent)]
    Nn(#[from] dermpipe_nn::NnError),

    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: impl Into<std::path::PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 0 ok / 1 internal error / 2 missing precondition.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingPrecondition(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
