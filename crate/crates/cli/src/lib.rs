//! IO, file formats, training harness, evaluation, and the CLI for the
//! avcanvas core.

pub mod ablate;
pub mod bench;
pub mod configs;
pub mod dataset;
pub mod eval;
pub mod formats;
pub mod manifest;
pub mod sample_run;
pub mod train;

use std::path::PathBuf;

/// Process-level error classes; each maps to a documented exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    /// Configuration problems (bad flags, bad config files, mismatched
    /// checkpoints). Exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// Numeric failures (non-finite loss or outputs). Exit code 3.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// Filesystem and format problems. Exit code 4.
    #[error("io error on {path}: {msg}")]
    Io { path: PathBuf, msg: String },
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Numeric(_) => 3,
            AppError::Io { .. } => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        AppError::Io {
            path: path.into(),
            msg: err.to_string(),
        }
    }

    pub fn config(msg: impl std::fmt::Display) -> Self {
        AppError::Config(msg.to_string())
    }
}

/// Core errors are configuration errors unless they signal NaN/Inf.
impl From<avcanvas_core::Error> for AppError {
    fn from(e: avcanvas_core::Error) -> Self {
        match e {
            avcanvas_core::Error::NonFinite { op } => {
                AppError::Numeric(format!("non-finite value in {op}"))
            }
            other => AppError::Config(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, AppError>;
