use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed wav: {0}")]
    Format(String),

    #[error("unsupported wav encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("input too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("overflow: {frames} frames exceed the limit of {limit}")]
    Overflow { frames: usize, limit: usize },

    #[error("state error: {0}")]
    State(String),

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("infeasible ctc target: {label_len} labels with {repeats} repeats need {needed} frames, got {frames}")]
    Infeasible {
        label_len: usize,
        repeats: usize,
        needed: usize,
        frames: usize,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("train/test leakage: {0}")]
    Leakage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
