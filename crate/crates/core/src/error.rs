use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not satisfy an operation's contract.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid architecture, training or operation parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Channel bookkeeping failed while assembling a model.
    #[error("build error in {block}: {msg}")]
    Build { block: String, msg: String },

    /// Input extents cannot pass through the model's pooling ladder.
    #[error("input size error: {0}")]
    InputSize(String),

    /// Stored indices or records point outside their target.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("training diverged at step {step}; last good checkpoint: {last_good:?}")]
    Diverged { step: usize, last_good: Option<PathBuf> },

    #[error("failed to load scene '{scene}': {msg}")]
    Load { scene: String, msg: String },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}

pub(crate) use config_err;
pub(crate) use shape_err;
