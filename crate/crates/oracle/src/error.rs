use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("{0}")]
    Argument(String),
    #[error("unknown axis `{0}`")]
    UnknownAxis(String),
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("table sums to {sum}, expected 1")]
    Unnormalized { sum: f64 },
    #[error("negative probability {value} at index {index}")]
    Negative { index: usize, value: f64 },
    #[error("reference distribution not bounded away from zero: entry {index} is {value} < {floor}")]
    Boundedness { index: usize, value: f64, floor: f64 },
}

pub type Result<T> = std::result::Result<T, OracleError>;
