use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("extent {extent} along the split axis is too small (need >= 2)")]
    TooSmall { extent: usize },

    #[error("fusion rate {0} outside (0, 1)")]
    BadRate(f32),

    #[error("label {label} belongs to {actual}, expected {expected}")]
    WrongTask {
        label: String,
        expected: &'static str,
        actual: &'static str,
    },

    #[error(
        "inconsistent prediction: {task5} was eliminated by the {task1} scene-level prediction"
    )]
    InconsistentPrediction { task1: String, task5: String },

    #[error("every class with positive score was eliminated")]
    AllMasked,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("grid spacing must be positive and finite, got {0}")]
    BadSpacing(f64),

    #[error("gate width must be finite and >= 0, got {0}")]
    BadEpsilon(f64),

    #[error("heatmaps have mixed dimensions")]
    MixedDims,

    #[error("severity thresholds must satisfy 0 < t1 < t2 < 1, got ({0}, {1})")]
    BadThresholds(f64, f64),

    #[error("cell count must be positive")]
    BadCellCount,

    #[error("unknown label {label:?} for {task}")]
    UnknownLabel { task: String, label: String },

    #[error("unknown task {0:?}")]
    UnknownTask(String),

    #[error("intensity {0} outside (0, 1)")]
    BadIntensity(f64),

    #[error("cannot corrupt {count} labels out of {available}")]
    CountTooLarge { count: usize, available: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    TruncatedFile { expected: usize, actual: usize },

    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dims(expected: impl std::fmt::Display, actual: impl std::fmt::Display) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
