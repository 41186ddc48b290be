use thiserror::Error;

/// Errors raised across the contraction engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TncError {
    #[error("invalid index: {0}")]
    InvalidIndex(String),

    #[error("data length {got} does not match index dimensions (expected {expected})")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("dimension mismatch on shared label `{label}`: {left} vs {right}")]
    DimensionMismatch {
        label: String,
        left: usize,
        right: usize,
    },

    #[error("invalid split partition: blocks={blocks}, group_size={group_size}")]
    InvalidPartition { blocks: usize, group_size: usize },

    #[error("circuit parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("bitstring length {got} does not match qubit count {expected}")]
    BitstringLength { expected: usize, got: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid contraction tree: {0}")]
    InvalidTree(String),

    #[error("label `{0}` does not occur in the network")]
    UnknownLabel(String),

    #[error("slicing cannot reach rank cap {cap}: {reason}")]
    SliceCapUnreachable { cap: usize, reason: String },

    #[error("reuse indices are not nested: {0}; run branch exchange first")]
    NotNested(String),

    #[error("malformed reuse schedule: {0}")]
    MalformedSchedule(String),

    #[error("intermediate at step {step} has {elements} elements, above the cap of {cap}")]
    OutOfMemory {
        step: usize,
        elements: usize,
        cap: usize,
    },

    #[error("checkpoint at fork of `{label}` needs {bytes} bytes, above the budget of {budget}")]
    CheckpointOverflow {
        label: String,
        bytes: u64,
        budget: u64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for TncError {
    fn from(e: std::io::Error) -> Self {
        TncError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for TncError {
    fn from(e: serde_json::Error) -> Self {
        TncError::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, TncError>;
