use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("tape: {0}")]
    Tape(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Data { path: PathBuf, message: String },

    #[error("unrecognized format: {0}")]
    Format(String),

    #[error("unsupported version: {0}")]
    Version(String),

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unusable for pre-training: {0}")]
    UnusableForPretraining(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn data(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. }
            | Error::Data { .. }
            | Error::Format(_)
            | Error::Version(_)
            | Error::Corrupt(_)
            | Error::InsufficientData(_)
            | Error::UnusableForPretraining(_) => 3,
            Error::Dimension { .. }
            | Error::Degenerate(_)
            | Error::NonFinite(_)
            | Error::Tape(_) => 4,
        }
    }
}
