use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite training loss at epoch {epoch}, frame {frame}")]
    NonFiniteLoss { epoch: usize, frame: usize },

    #[error("fold with test frame {test_frame} failed: {source}")]
    Fold {
        test_frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("data error: {0}")]
    Data(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }

    /// True when the root cause is a numeric failure (non-finite values).
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFinite(_) | Error::NonFiniteLoss { .. } => true,
            Error::Fold { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    /// True for argument validation failures (as opposed to I/O or data problems).
    pub fn is_usage(&self) -> bool {
        match self {
            Error::InvalidArgument(_) | Error::ShapeMismatch { .. } => true,
            Error::Fold { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}
