use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?} for {len} values")]
    BadShape { shape: Vec<usize>, len: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("softmax row {0} is fully masked")]
    FullyMaskedRow(usize),

    #[error("character {ch:?} at position {pos} is not in the alphabet")]
    OutOfAlphabet { ch: char, pos: usize },

    #[error("token id {0} is outside the vocabulary")]
    UnknownToken(usize),

    #[error("distractor pool has {available} phrases, {requested} requested")]
    PoolTooSmall { available: usize, requested: usize },

    #[error("no alignment can produce {labels} labels")]
    InfeasibleAlignment { labels: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("unknown parameter {0:?}")]
    UnknownParam(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("fingerprint mismatch: checkpoint {checkpoint}, config {config}")]
    FingerprintMismatch { checkpoint: String, config: String },

    #[error("{0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
