use std::path::PathBuf;

use crate::report::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate instance id `{id}` at line {line}")]
    DuplicateId { id: String, line: usize },

    #[error("instance `{id}`: {field} is not finite")]
    NonFiniteScore { id: String, field: &'static str },

    #[error("embedding `{key}`: expected dimension {expected}, found {found}")]
    Dimension {
        key: String,
        expected: usize,
        found: usize,
    },

    #[error("duplicate embedding key `{key}`")]
    DuplicateKey { key: String },

    #[error("invalid tree:\n{0}")]
    InvalidTree(ValidationReport),

    #[error("target: {0}")]
    Target(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("clustering: {0}")]
    Cluster(String),

    #[error("refiner failed during {step} on {location}: {message}")]
    Refiner {
        step: &'static str,
        location: String,
        message: String,
    },

    #[error("{0}")]
    Input(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
