use thiserror::Error;

#[derive(Debug, Error)]
pub enum CptError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("malformed tree: {0}")]
    Structure(String),

    #[error("invalid model state: {0}")]
    State(String),

    #[error("non-finite value at node {node}: {what}")]
    Numeric { node: usize, what: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CptError>;
