//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic, not a {format} file")]
    BadMagic { format: &'static str, path: PathBuf },

    #[error("{path}: unsupported {format} version {version}")]
    UnsupportedVersion {
        format: &'static str,
        version: u32,
        path: PathBuf,
    },

    #[error("{path}: truncated payload, expected {expected} bytes but only {got} available")]
    TruncatedPayload {
        path: PathBuf,
        expected: u64,
        got: u64,
    },

    #[error("{path}: malformed header: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("invalid embedding field: {0}")]
    InvalidField(String),

    #[error("empty buffer at ({center_x}, {center_y}) radius {radius}: no contributing cells")]
    EmptyBuffer {
        center_x: f64,
        center_y: f64,
        radius: f64,
    },

    #[error("csv error in {path}: {reason}")]
    Csv { path: PathBuf, reason: String },

    #[error("poi data error: {0}")]
    Poi(String),

    #[error("text embedding error: {0}")]
    TextEmbedding(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid config: field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("region error: {0}")]
    Region(String),

    #[error("task error: {0}")]
    Task(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
