use std::path::PathBuf;

use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller supplied an argument outside the operation's contract.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A configuration value was rejected (unknown key, bad value, indivisible batch).
    #[error("configuration error: {0}")]
    Config(String),

    /// A file did not match its expected layout.
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// A training step produced a non-finite loss.
    #[error("non-finite loss at step {step} (source={source_loss}, consistency={consistency_loss}); batch ids: {batch_ids:?}")]
    NonFinite {
        step: u64,
        source_loss: f64,
        consistency_loss: f64,
        batch_ids: Vec<String>,
    },

    /// An internal invariant was violated.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Argument(_) => "argument",
            Error::Config(_) => "config",
            Error::Format { .. } => "format",
            Error::NonFinite { .. } => "non_finite",
            Error::Internal(_) => "internal",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
