use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("idx parse error in {path} at byte {offset}: {detail}")]
    IdxParse {
        path: PathBuf,
        offset: u64,
        detail: String,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("dataset is empty or inconsistent: {0}")]
    BadDataset(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    TrainingDiverged { epoch: usize },

    #[error("forward pass produced non-finite values")]
    NonFiniteForward,

    #[error("pattern key overflows u64 for group counts {group_counts:?}")]
    PatternKeyOverflow { group_counts: Vec<usize> },

    #[error("relu pattern enumeration refused: {total} hidden neurons exceed the cap of {cap} (2^n clauses)")]
    ReluEnumerationCap { total: usize, cap: usize },

    #[error("duplicate region key {key} for class {class}")]
    DuplicateRegionKey { class: usize, key: u64 },

    #[error("{0}")]
    Unsupported(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }
}
