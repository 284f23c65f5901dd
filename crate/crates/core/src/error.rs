//! Crate-wide error type. Variants map onto the CLI exit-code classes:
//! config/validation, I/O, and non-finite numerics.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Grid or mask dimensions are empty, incongruent, or otherwise unusable.
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    /// Band thresholds out of order or a threshold parameter set that cannot
    /// produce a valid band for the requested grid.
    #[error("invalid threshold: {0}")]
    InvalidThreshold(String),

    /// Step index outside the range an operation is defined on.
    #[error("invalid step {t}: {reason}")]
    InvalidStep { t: usize, reason: String },

    /// Prompt selector empty, out of range, or reweighting malformed.
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),

    /// Configuration value rejected by validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A non-finite value appeared where the pipeline requires finite data.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A snapshot file failed structural validation.
    #[error("snapshot {path}: {reason}")]
    Snapshot { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
