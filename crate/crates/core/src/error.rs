use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing field `{field}` at line {line}")]
    MissingField { line: usize, field: String },

    #[error("no records survived curation")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("checkpoint is corrupt or truncated: {0}")]
    CorruptChecksum(String),

    #[error("checkpoint head mismatch: expected {expected}, found {found}")]
    HeadMismatch { expected: String, found: String },

    #[error("image {width}x{height} is too small (minimum side {min_side})")]
    ImageTooSmall { width: u32, height: u32, min_side: u32 },

    #[error("bag has no patches")]
    EmptyBag,

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("no transcript token has an embedding")]
    NoKnownTokens,

    #[error("missing prediction for `{0}`")]
    MissingPrediction(String),

    #[error("empty ground truth for `{0}`")]
    EmptyGroundTruth(String),

    #[error("degenerate box {0:?}")]
    DegenerateBox(crate::geom::PixelBox),

    #[error("image error: {0}")]
    Image(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Failures caused by numerics rather than by the input data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. })
    }
}
