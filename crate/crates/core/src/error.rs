use std::path::PathBuf;

use thiserror::Error;

use crate::search_space::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", fmt_violations(.0))]
    InvalidConfig(Vec<Violation>),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("image/mask shape mismatch for sample {index}: image {image:?}, mask {mask:?}")]
    ShapeMismatch {
        index: usize,
        image: (u32, u32),
        mask: (u32, u32),
    },

    #[error("empty meta-feature list")]
    EmptyFeatures,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("epoch gap for {key}: expected epoch {expected}, got {got}")]
    EpochGap {
        key: String,
        expected: u32,
        got: u32,
    },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("empty curve store")]
    EmptyStore,

    #[error("epoch {0} out of range 1..=10")]
    EpochOutOfRange(u32),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("cholesky factorization failed even with jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("negative variance {0}")]
    NegativeVariance(f64),

    #[error("no candidates to score")]
    NoCandidates,

    #[error("pool exhausted")]
    PoolExhausted,

    #[error("checkpoint was meta-trained on target dataset '{0}' (leave-one-dataset-out violated)")]
    LodoViolation(String),

    #[error("unsupported checkpoint format version {0}")]
    CheckpointVersion(u32),

    #[error("worker: {0}")]
    Worker(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image decode: {0}")]
    Image(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn fmt_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
