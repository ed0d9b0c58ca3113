use thiserror::Error;

/// Errors produced by any stage of the estimation pipeline.
#[derive(Error, Debug)]
pub enum CdeError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at data row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("input file is empty")]
    EmptyFile,

    #[error("response column {0:?} not found")]
    MissingColumn(String),

    #[error("degenerate response range: all labelled z values are identical")]
    DegenerateResponseRange,

    #[error("coordinate {0} has zero variance")]
    ZeroVariance(usize),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{name} = {value} out of range 1..={max}")]
    IndexOutOfRange {
        name: &'static str,
        value: usize,
        max: usize,
    },

    #[error("sample {0} is unlabelled but a response is required")]
    UnlabeledSample(usize),

    #[error("point {0} is isolated: zero degree after sparsification")]
    IsolatedPoint(usize),

    #[error("eigensolver failed: {0}")]
    EigenFailed(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error("unsupported basis for this operation: {0}")]
    UnsupportedBasis(String),
}

pub type Result<T> = std::result::Result<T, CdeError>;
