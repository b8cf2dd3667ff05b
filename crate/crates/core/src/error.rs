use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit reports. The variants line up with the CLI exit
/// codes: validation/usage/format → 2, protocol → 3, transport/I/O → 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },

    #[error("usage error: {0}")]
    Usage(String),

    /// Malformed or inconsistent reply from a remote scorer. Never retried.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// The connection to a remote scorer failed; the request may be retried.
    #[error("transport error: {0}")]
    Transport(#[source] std::io::Error),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("experiment failed: {0}")]
    Experiment(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub fn format(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Format {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport(_))
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Format { .. } | Error::Usage(_) => 2,
            Error::Protocol(_) => 3,
            Error::Transport(_) | Error::Io { .. } => 4,
            Error::Experiment(_) => 1,
        }
    }
}
