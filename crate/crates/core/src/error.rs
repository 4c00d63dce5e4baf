use std::path::{Path, PathBuf};

use hali_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HaliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Argument(String),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("non-finite {what} at step {step}: {detail}")]
    NonFinite { what: String, step: u64, detail: String },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("checkpoint truncated: {0}")]
    CheckpointTruncated(String),
    #[error("checkpoint checksum mismatch")]
    CheckpointChecksum,
    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),
}

impl HaliError {
    pub fn config(msg: impl Into<String>) -> Self {
        HaliError::Config(msg.into())
    }

    pub fn arg(msg: impl Into<String>) -> Self {
        HaliError::Argument(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HaliError::Io { path: path.to_path_buf(), source }
    }
}

pub type Result<T> = std::result::Result<T, HaliError>;
