use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or inconsistent model dimensions.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates a precondition (empty series, single-class labels, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A linear solve or training step produced an unusable number.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Speed model evaluated outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A metric that is not defined for the given input.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        column: u64,
        message: String,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the configuration rather than by the data.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
