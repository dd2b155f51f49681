use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no classes found under {0}")]
    NoClasses(PathBuf),

    #[error("cannot decode image {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("{kind}: image {width}x{height} is smaller than the required support {min}x{min}")]
    ImageTooSmall {
        kind: String,
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("negative entry {value} at index {index}; {metric} requires nonnegative vectors")]
    NegativeEntry {
        metric: &'static str,
        index: usize,
        value: f64,
    },

    #[error("not a feature table")]
    NotAFeatureTable,

    #[error("unsupported feature table version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated feature table: {0}")]
    Truncated(String),

    #[error("duplicate image id {0}")]
    DuplicateId(u32),

    #[error("unknown image id {0}")]
    UnknownId(u32),

    #[error("unknown descriptor kind `{0}`")]
    UnknownKind(String),

    #[error("unknown metric `{0}`")]
    UnknownMetric(String),

    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),

    #[error("ingest error at row {row}: {reason}")]
    Ingest { row: usize, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("training labels contain a single class")]
    SingleClass,

    #[error("label for image {0} contradicts an earlier label")]
    LabelConflict(u32),

    #[error("session is finished")]
    SessionFinished,

    #[error("inconsistent reports: {0}")]
    InconsistentReports(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
