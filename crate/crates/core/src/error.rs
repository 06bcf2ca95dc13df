use std::path::PathBuf;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration (bad counts, inconsistent support set, unknown kinds).
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument outside the operation's domain (negative threshold, shape mismatch, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A numeric routine failed to converge or produced non-finite values.
    #[error("numeric error: {message}")]
    Numeric { message: String },

    /// Malformed binary or text payload.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Meta-training diverged.
    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric {
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
