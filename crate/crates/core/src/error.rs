use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed JSON{}: {source}", .doc_index.map(|i| format!(" in document {i}")).unwrap_or_default())]
    Parse {
        doc_index: Option<usize>,
        #[source]
        source: serde_json::Error,
    },

    #[error("document `{doc_id}`: {message}")]
    Validation { doc_id: String, message: String },

    #[error("split: {0}")]
    Split(String),

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty document `{0}`: at least one token is required")]
    EmptyDocument(String),

    #[error("relation pair requires distinct entities, got ({0}, {0})")]
    SelfPair(usize),

    #[error("non-finite loss at batch {batch} (step {step}); parameter norms: {norms}")]
    NonFiniteLoss { batch: usize, step: usize, norms: String },

    #[error("checkpoint integrity: {0}")]
    Checkpoint(String),

    #[error("document id mismatch: prediction `{pred}` vs gold `{gold}`")]
    DocIdMismatch { pred: String, gold: String },

    #[error("invalid schedule: {0}")]
    Schedule(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(doc_id: &str, message: impl Into<String>) -> Self {
        Error::Validation {
            doc_id: doc_id.to_string(),
            message: message.into(),
        }
    }
}
