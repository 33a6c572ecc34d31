use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which half of an alternating training epoch produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Contrast,
    Controller,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Contrast => f.write_str("contrast"),
            Phase::Controller => f.write_str("controller"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {detail}")]
    Format { path: PathBuf, line: usize, detail: String },

    #[error("split error: {0}")]
    Split(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite {phase} loss at epoch {epoch}")]
    NonFinite { epoch: usize, phase: Phase },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unknown {kind} `{name}` (registered: {known})")]
    UnknownStrategy { kind: &'static str, name: String, known: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), line, detail: detail.into() }
    }
}
