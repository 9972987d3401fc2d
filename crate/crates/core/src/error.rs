use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("box {bbox:?} does not intersect the {width}x{height} region")]
    EmptyClip {
        bbox: [f64; 4],
        width: f64,
        height: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("failed to parse {path}: {message} (line {line}, column {column})")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    /// Transport-level or server-side failure of a model backend.
    #[error("backend error ({context}): {message}")]
    Backend {
        context: String,
        message: String,
        retriable: bool,
    },

    /// The backend answered, but not in the agreed wire format.
    #[error("protocol error ({context}): {message}")]
    Protocol { context: String, message: String },

    #[error("student fit failed: {0}")]
    Fit(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_retriable(&self) -> bool {
        matches!(self, Error::Backend { retriable: true, .. })
    }

    /// Wraps backend and protocol errors with additional context, leaving other variants alone.
    pub fn with_context(self, outer: impl std::fmt::Display) -> Self {
        match self {
            Error::Backend {
                context,
                message,
                retriable,
            } => Error::Backend {
                context: format!("{outer}: {context}"),
                message,
                retriable,
            },
            Error::Protocol { context, message } => Error::Protocol {
                context: format!("{outer}: {context}"),
                message,
            },
            other => other,
        }
    }
}
