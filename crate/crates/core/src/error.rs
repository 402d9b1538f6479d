use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid JSON at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid hierarchy: {0}")]
    Hierarchy(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image rejected: {0}")]
    Image(String),

    #[error("image source: {0}")]
    Source(String),

    #[error("authentication failed: {0}")]
    Auth(String),

    #[error("embedding provider: {message}")]
    Provider { message: String, retryable: bool },

    #[error("incompatible pipeline: {0}")]
    Pipeline(String),

    #[error("bad magic in {file}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        file: String,
        expected: u32,
        found: u32,
    },

    #[error("truncated payload in {file}: expected {expected} bytes, found {actual}")]
    Truncated {
        file: String,
        expected: usize,
        actual: usize,
    },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unknown id {0}")]
    UnknownId(String),

    #[error("already resolved: {0}")]
    Conflict(String),

    #[error("invalid override path {main} / {sub}")]
    InvalidOverride { main: String, sub: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn provider(message: impl Into<String>, retryable: bool) -> Self {
        Error::Provider {
            message: message.into(),
            retryable,
        }
    }

    /// True for failures caused by the environment (network, filesystem, external
    /// processes) rather than by user input.
    pub fn is_environment(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Source(_) | Error::Auth(_) | Error::Provider { .. }
        )
    }

    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            Error::Provider {
                retryable: true,
                ..
            }
        )
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}
