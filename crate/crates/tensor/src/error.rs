use thiserror::Error;

/// Errors raised by tensor construction and graph operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension mismatch on axis `{axis}` (expected {expected}, got {got})")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
    #[error("{op}: invalid argument: {msg}")]
    Argument { op: &'static str, msg: String },
    #[error("weight_norm: direction for output unit {unit} has norm {norm:e} below 1e-12")]
    DegenerateDirection { unit: usize, norm: f64 },
    #[error("non-finite value at flat index {index} ({context})")]
    NonFinite { index: usize, context: String },
}

impl TensorError {
    pub(crate) fn arg(op: &'static str, msg: impl Into<String>) -> Self {
        TensorError::Argument { op, msg: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;
