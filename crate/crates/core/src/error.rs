use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error category, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or arguments supplied by the caller.
    Usage,
    /// Malformed or inconsistent input data.
    Ingest,
    /// Numerical failure (degenerate rows, divergence).
    Numeric,
    /// Filesystem failure.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("class id {0} is not present in the class table")]
    InvalidClass(u32),

    #[error("contour has no points")]
    InvalidContour,

    #[error("invalid label mask: {0}")]
    InvalidMask(String),

    #[error("count must be a positive integer, got {0}")]
    InvalidCount(i64),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("ingest error in {}: {message}", path.display())]
    Ingest { path: PathBuf, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("row {0} has zero norm and cannot be normalized")]
    DegenerateRow(usize),

    #[error("rows are not unit-norm (row {row} has norm {norm})")]
    NotNormalized { row: usize, norm: f64 },

    #[error("training diverged at step {step}")]
    TrainingFailure { step: usize },

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("cannot sample {shots} shots from class {class} with {available} rows")]
    Sampling {
        class: usize,
        shots: usize,
        available: usize,
    },

    #[error("caption format error: {0}")]
    CaptionFormat(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidClass(_)
            | Error::Config(_)
            | Error::Template(_)
            | Error::InvalidCount(_)
            | Error::Sampling { .. } => ErrorKind::Usage,
            Error::InvalidContour
            | Error::InvalidMask(_)
            | Error::InvalidImage(_)
            | Error::Parse { .. }
            | Error::Ingest { .. }
            | Error::Shape(_)
            | Error::Pairing(_)
            | Error::Label(_)
            | Error::DegenerateLabels(_)
            | Error::CaptionFormat(_) => ErrorKind::Ingest,
            Error::EmptyBatch
            | Error::DegenerateRow(_)
            | Error::NotNormalized { .. }
            | Error::TrainingFailure { .. } => ErrorKind::Numeric,
            Error::Io { .. } => ErrorKind::Io,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn ingest(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Ingest {
            path: path.into(),
            message: message.into(),
        }
    }
}
