use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("trajectory {index} is malformed: {reason}")]
    MalformedTrajectory { index: usize, reason: String },

    #[error("{path}: line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: line {line}: unsupported record version {found} (expected {expected})")]
    Version {
        path: PathBuf,
        line: usize,
        found: u64,
        expected: u64,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unknown environment `{name}`; registry: {registry}")]
    UnknownEnv { name: String, registry: String },

    #[error("episode already finished after {horizon} steps")]
    EpisodeOver { horizon: usize },

    #[error("action {action} out of range for {action_count} actions")]
    InvalidAction { action: usize, action_count: usize },

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{algorithm} requires a tabular environment")]
    NeedsTabular { algorithm: &'static str },

    #[error("MCE IRL diverged at iteration {iter}: feature gap {gap:.4e} exceeds 10x the initial gap {initial:.4e}; try a smaller learning rate")]
    Diverged { iter: usize, gap: f64, initial: f64 },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
