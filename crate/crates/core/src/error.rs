use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid kernel: length {kernel} exceeds input length {input}")]
    InvalidKernel { kernel: usize, input: usize },
    #[error("invalid stride {0}: must be at least 1")]
    InvalidStride(usize),
    #[error("invalid pooling target {target} for input length {input}")]
    InvalidTarget { target: usize, input: usize },
    #[error("invalid dropout ratio {0}: must lie in [0, 1)")]
    InvalidRatio(f64),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid split: n = {n} is smaller than k = {k}")]
    InvalidSplit { n: usize, k: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
}
