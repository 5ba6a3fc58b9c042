use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box {0:?}: need finite x1 < x2, y1 < y2, all >= 0")]
    InvalidBox([f64; 4]),

    #[error("invalid detection at frame {frame}: {reason}")]
    InvalidDetection { frame: u32, reason: String },

    #[error("invalid tubelet `{id}`: {reason}")]
    InvalidTubelet { id: String, reason: String },

    #[error("invalid span [{start}, {end}] at {fps} fps")]
    InvalidSpan { start: u32, end: u32, fps: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("scorer input missing: {0}")]
    MissingScorerInput(String),

    #[error("tubelet `{id}` is empty after trimming to [{start}, {end}]")]
    EmptyTrim { id: String, start: u32, end: u32 },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("unknown video id `{id}` in {context}")]
    IdMismatch { id: String, context: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Configuration problems map to exit status 2, everything else to 1.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
