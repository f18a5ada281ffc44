use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents disagree with what an operation requires.
    #[error("{op}: dimension mismatch on {axis}: expected {expected}, got {actual}")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Shape of a tensor is not valid for the operation (wrong rank, empty extents, ...).
    #[error("{op}: invalid shape {shape:?}: {reason}")]
    Shape {
        op: &'static str,
        shape: Vec<usize>,
        reason: String,
    },

    /// Architecture or run configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// A value that must be finite was not.
    #[error("numeric error in {context}: {detail}")]
    Numeric { context: String, detail: String },

    /// An API was called in the wrong order or with inconsistent arguments.
    #[error("usage error: {0}")]
    Usage(String),

    /// Evaluation function returned different values for identical inputs.
    #[error("non-deterministic evaluation: baseline calls returned {first} and {second}")]
    Determinism { first: f64, second: f64 },

    /// A metric cannot be computed from the given counts.
    #[error("undefined metric {metric}: {reason}")]
    UndefinedMetric { metric: &'static str, reason: String },

    /// Malformed binary or text file.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    /// File ended before the declared payload.
    #[error("truncated file {path}: {reason}")]
    Truncated { path: String, reason: String },

    /// Model file written by an incompatible format version.
    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    /// Stored parameter does not match the architecture it is loaded into.
    #[error("parameter {id}: stored shape {stored:?} does not match expected {expected:?}")]
    ParamShape {
        id: String,
        stored: Vec<usize>,
        expected: Vec<usize>,
    },

    /// Parameter present in one side of a load but not the other.
    #[error("parameter {0} missing")]
    MissingParam(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(op: &'static str, axis: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            op,
            axis,
            expected,
            actual,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
