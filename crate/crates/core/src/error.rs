use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::embedstore::{ProviderError, StoreError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("class {class_id} ({label}) needs {needed} items, manifest has {available}")]
    Shortage {
        class_id: usize,
        label: String,
        needed: usize,
        available: usize,
    },

    #[error("task index {index} out of range 1..={num_tasks}")]
    TaskOutOfRange { index: usize, num_tasks: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero-norm vector has no cosine similarity")]
    ZeroNorm,

    #[error("non-finite value in embedding")]
    NonFinite,

    #[error("grid of side {grid} does not divide a {size}px image")]
    IndivisibleGrid { size: usize, grid: usize },

    #[error("image: {0}")]
    Image(String),

    #[error("class {0} already has a prototype")]
    ClassAlreadyFitted(u32),

    #[error("{0}")]
    Metric(String),

    #[error("digest mismatch: expected {0}, found {1}")]
    DigestMismatch(String, String),

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Store(#[from] StoreError),

    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }
}
