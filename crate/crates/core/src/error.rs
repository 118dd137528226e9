use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero-length polyline")]
    ZeroLengthPolyline,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("query overflow: {gt} ground-truth elements exceed {queries} queries")]
    QueryOverflow { gt: usize, queries: usize },

    #[error("invalid step pair: t={t}, t_prev={t_prev}")]
    InvalidStepPair { t: usize, t_prev: usize },

    #[error("generation failed after {0} attempts")]
    GenerationFailed(usize),

    #[error("numeric overflow in {0}")]
    NumericOverflow(&'static str),

    #[error("training diverged at step {step}; diagnostic checkpoint at {checkpoint:?}")]
    Diverged {
        step: usize,
        checkpoint: Option<PathBuf>,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate ROC: {positives} positives, {negatives} negatives")]
    DegenerateRoc { positives: usize, negatives: usize },

    #[error("no valid scenes")]
    NoValidScenes,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io error at {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path:?}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::Checkpoint(_) => 2,
            Error::NumericOverflow(_) | Error::Diverged { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
