use std::path::PathBuf;

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),

    #[error("unknown {kind} `{name}` (expected one of: {expected})")]
    UnknownVariant { kind: &'static str, name: String, expected: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("invalid scene `{scene}`: {reason}")]
    Scene { scene: String, reason: String },

    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
