use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: index {index} out of range for size {size}")]
    Index {
        op: &'static str,
        index: usize,
        size: usize,
    },
    #[error("invalid tensor: {0}")]
    Invalid(String),
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("gradient oracle: {0}")]
    Oracle(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;
