use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("backward called without a cached train-mode forward state")]
    MissingCache,
    #[error("batchnorm evaluated before any train-mode update")]
    UninitializedStats,
    #[error("binary target must be 0 or 1, got {0}")]
    InvalidTarget(f64),
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("protocol infeasible: {0}")]
    Infeasible(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
}
