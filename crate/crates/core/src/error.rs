use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("value {value} lies outside the feature domain [-{half_width}, {half_width}]")]
    DomainViolation { value: f64, half_width: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dimension mismatch: expected {expected} columns, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("capacity exceeded: {what} needs {required} entries, limit is {limit}")]
    Capacity {
        what: &'static str,
        required: u128,
        limit: u128,
    },

    #[error("numerical failure: {context} (last jitter tried: {jitter:e})")]
    NumericalFailure { context: String, jitter: f64 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("target column {0} not found")]
    MissingColumn(String),

    #[error("unsupported model schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("malformed model file: {0}")]
    Model(String),

    #[error("operation requires a {expected} model")]
    TaskMismatch { expected: &'static str },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
