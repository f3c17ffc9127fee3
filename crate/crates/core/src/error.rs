use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::backend::BackendError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("no prompts could be extracted from the model output")]
    Extraction,

    #[error("tuning setup failed: {0}")]
    TuningSetup(String),

    #[error("scoring of prompt {prompt:?} failed: {source}")]
    Scoring {
        prompt: String,
        #[source]
        source: BackendError,
    },

    #[error("inference setup failed: {0}")]
    InferenceSetup(String),

    #[error("empty evaluation: {0}")]
    EmptyEvaluation(String),

    #[error("logic error: {0}")]
    Logic(String),

    #[error("journal error in {path}: {message}")]
    Journal { path: PathBuf, message: String },

    #[error("run interrupted after {0} journal events")]
    Interrupted(u64),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn journal(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Journal {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code: 1 usage/config, 2 backend, 3 data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Usage(_) | Error::Precondition(_) => 1,
            Error::Backend(_) | Error::Scoring { .. } | Error::TuningSetup(_) | Error::Extraction => 2,
            Error::Data(_)
            | Error::Input(_)
            | Error::InferenceSetup(_)
            | Error::EmptyEvaluation(_)
            | Error::Journal { .. }
            | Error::Io { .. } => 3,
            Error::Logic(_) | Error::Interrupted(_) => 1,
        }
    }
}
