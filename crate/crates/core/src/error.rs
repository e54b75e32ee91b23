use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("window of {window_s} s is longer than the recording ({duration_s} s)")]
    WindowTooLong { window_s: f64, duration_s: f64 },

    #[error("annotation [{start_s}, {end_s}] s lies outside the recording (0..{duration_s} s)")]
    AnnotationOutOfBounds { start_s: f64, end_s: f64, duration_s: f64 },

    #[error("missing electrode `{0}`")]
    MissingElectrode(String),

    #[error("input is already segmented into trials: {0}")]
    AlreadySegmented(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("trials belong to more than one subject: {0:?}")]
    MixedSubjects(Vec<String>),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("only one class present: {0}")]
    SingleClass(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss is not finite")]
    Diverged { epoch: usize, step: usize },

    #[error("dataset not found at {0}")]
    MissingDataset(PathBuf),

    #[error("format error: {0}")]
    Format(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape { expected: expected.to_string(), actual: actual.to_string() }
    }
}
