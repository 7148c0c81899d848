use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("taxonomy: {0}")]
    Taxonomy(String),

    #[error("corpus: {0}")]
    Corpus(String),

    #[error("embedding format: {0}")]
    Format(String),

    #[error("non-finite value in row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("row {row} has zero L2 norm")]
    ZeroNorm { row: usize },

    #[error("similarity: {0}")]
    Similarity(String),

    #[error("training: {0}")]
    Training(String),

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("config: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable short name used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Taxonomy(_) => "taxonomy",
            Error::Corpus(_) => "corpus",
            Error::Format(_) => "format",
            Error::NonFinite { .. } => "non_finite",
            Error::ZeroNorm { .. } => "zero_norm",
            Error::Similarity(_) => "similarity",
            Error::Training(_) => "training",
            Error::Evaluation(_) => "evaluation",
            Error::Config(_) => "config",
            Error::Json(_) => "json",
        }
    }
}
