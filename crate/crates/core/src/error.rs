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

    #[error(transparent)]
    Stream(#[from] std::io::Error),

    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("insufficient training sample: {got} vectors, need at least {need}")]
    InsufficientTraining { got: usize, need: usize },

    #[error("{got} descriptors available but coarse_k = {coarse_k}; lower coarse_k to at most {got}")]
    TooFewDescriptors { got: usize, coarse_k: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("embedding dimension {k} exceeds {n_active} active nodes")]
    EmbeddingTooLarge { k: usize, n_active: usize },

    #[error("node {0} has zero degree; isolated nodes must be removed before embedding")]
    IsolatedNode(usize),

    #[error("missing embeddings for image ids {0:?}")]
    MissingEmbeddings(Vec<u32>),

    #[error("cannot form impostor: {0} non-empty clusters, need at least 2")]
    CannotFormImpostor(usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            message: message.into(),
        }
    }
}
