use thiserror::Error;
use trisleep_numcore::NumError;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("cannot load parameter `{name}`: {detail}")]
    Load { name: String, detail: String },
    #[error("invalid input: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
