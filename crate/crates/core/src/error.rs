use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("episode error: {0}")]
    Episode(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("sampler error at step {step}: {message}")]
    Sampler { step: usize, message: String },

    #[error("finite-difference oracle error at coordinate {coordinate}: {message}")]
    Oracle { coordinate: usize, message: String },

    #[error("metrics error: {0}")]
    Metrics(String),

    #[error("training aborted (episode seed {episode_seed}, step {step}): {message}")]
    Training {
        episode_seed: u64,
        step: usize,
        message: String,
    },

    #[error("{}:{line}: {message}", path.display())]
    Load {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("parameter file error: {0}")]
    ParamFile(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn load(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Short category name, used by the CLI for exit codes and messages.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) | Error::Contract(_) => "contract",
            Error::Input(_) | Error::Episode(_) => "input",
            Error::Config(_) => "config",
            Error::Sampler { .. } | Error::Training { .. } => "numeric",
            Error::Oracle { .. } => "oracle",
            Error::Metrics(_) => "metrics",
            Error::Load { .. } | Error::ParamFile(_) | Error::Json(_) => "format",
            Error::Io { .. } => "io",
        }
    }
}
