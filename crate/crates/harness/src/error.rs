use std::path::PathBuf;

use thiserror::Error;
use trisleep_core::CoreError;
use trisleep_numcore::NumError;
use trisleep_sync::SyncError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config line {line}: {detail}")]
    Config { line: usize, detail: String },
    #[error("invalid setting: {0}")]
    Invalid(String),
    #[error("checkpoint {}: {detail}", path.display())]
    Checkpoint { path: PathBuf, detail: String },
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
