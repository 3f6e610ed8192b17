use thiserror::Error;

/// Failures surfaced by the tensor engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    InvalidShape { op: &'static str, detail: String },
    #[error("{op}: input of length {len} is shorter than kernel {kernel}")]
    InputTooShort {
        op: &'static str,
        len: usize,
        kernel: usize,
    },
    #[error("{op}: label {label} at row {row} is out of range")]
    Label {
        op: &'static str,
        row: usize,
        label: usize,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("parameter `{name}` has no gradient")]
    UninitializedGrad { name: String },
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("unknown parameter id {0}")]
    UnknownParam(usize),
    #[error("closure is not deterministic: two forward passes gave {first} and {second}")]
    Determinism { first: f64, second: f64 },
    #[error("backward requires a recording graph")]
    NotRecording,
    #[error("{0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, NumError>;
