use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index {index} out of range (bound {bound}) in {context}")]
    Index {
        index: usize,
        bound: usize,
        context: String,
    },

    #[error("non-finite value{}: {message}", epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    Numeric {
        epoch: Option<usize>,
        message: String,
    },

    #[error("stale forward trace: {0}")]
    Trace(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("class {class} out of range for {count} classes")]
    Class { class: usize, count: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("instance is already classified as target class {target}")]
    AlreadyCounterfactual { target: usize },

    #[error("{0}")]
    Unsupported(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn dim(message: impl Into<String>) -> Self {
        Error::Dimension(message.into())
    }

    /// Wraps the error with a human-readable location such as `fold 2, instance 17`.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
