use std::io;

use thiserror::Error;

/// Errors produced by the label propagation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("class {class} has {available} examples, {requested} requested")]
    InsufficientClass {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("bad magic bytes in {kind} file")]
    BadMagic { kind: &'static str },

    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("dimensions {rows}x{cols} overflow the addressable size")]
    DimensionOverflow { rows: u64, cols: u64 },

    #[error("malformed record on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("non-finite value encountered while solving column {column}")]
    NonFinite { column: usize },

    #[error("dense solve refused: n = {n} exceeds cap {cap}")]
    TooLarge { n: usize, cap: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("missing weight for pseudo-labeled example {index}")]
    MissingWeight { index: usize },

    #[error("all classes are empty")]
    AllClassesEmpty,

    #[error("non-finite loss")]
    NonFiniteLoss,

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
