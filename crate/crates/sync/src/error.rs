use thiserror::Error;

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("chunk {index} overlaps the previous chunk in time")]
    Overlap { index: usize },
    #[error("chunk {index} starts before the previous chunk")]
    Unsorted { index: usize },
    #[error("chunk {index} is corrupt: {detail}")]
    CorruptChunk { index: usize, detail: String },
    #[error("streams are not aligned: {0}")]
    Alignment(String),
    #[error("invalid label track: {0}")]
    Labels(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, SyncError>;
