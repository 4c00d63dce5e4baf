use std::path::PathBuf;

use thiserror::Error;

/// IDX parse failures, one variant per way a file can be wrong.
#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: magic {found} (expected {expected})")]
    Magic { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: truncated, {got} bytes where the header declares {expected}")]
    Truncated { path: PathBuf, expected: usize, got: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: label {label} at index {index} is not a digit")]
    Label { path: PathBuf, index: usize, label: u8 },
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad invocation; exits with status 2.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error(transparent)]
    Hali(#[from] hali::HaliError),
    #[error(transparent)]
    Oracle(#[from] hali_oracle::OracleError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Format(String),
    /// A check ran and failed.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
