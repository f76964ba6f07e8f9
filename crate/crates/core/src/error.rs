use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum CwtmError {
    #[error("invalid Dirichlet prior: {0}")]
    InvalidPrior(String),
    #[error("invalid sample batch: {0}")]
    InvalidBatch(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("empty document{}", .0.as_ref().map(|id| format!(" '{id}'")).unwrap_or_default())]
    EmptyDocument(Option<String>),
    #[error("document '{0}' not found in embedding cache")]
    CacheMiss(String),
    #[error("operation not supported in {mode} mode: {what}")]
    UnsupportedMode { mode: &'static str, what: String },
    #[error("malformed embedding cache: {0}")]
    CacheFormat(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("corpus has {have} documents, need at least {need}")]
    CorpusTooSmall { have: usize, need: usize },
    #[error("topic {0} has no positive weight")]
    DegenerateTopic(usize),
    #[error("missing embedding for word '{0}'")]
    MissingEmbedding(String),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("malformed input at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CwtmError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CwtmError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CwtmError>;
