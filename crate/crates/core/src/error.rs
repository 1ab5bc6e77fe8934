use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every layer of the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid scene: {0}")]
    Scene(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("token id {id} is outside the vocabulary (size {vocab})")]
    TokenOutOfRange { id: usize, vocab: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite value in loss term `{term}`")]
    NonFinite { term: String },

    #[error("frozen parameters: {0}")]
    Frozen(String),

    #[error("sampling already complete (t = 0)")]
    SamplingComplete,

    #[error("matrix is not positive semidefinite: eigenvalue {0:e}")]
    NotPsd(f64),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("missing sidecar for {0}")]
    MissingSidecar(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
