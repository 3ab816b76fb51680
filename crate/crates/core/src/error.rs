use std::io;

/// Errors produced anywhere in the training stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("step called on a finished episode")]
    EpisodeFinished,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("backward called on a value with no path to trainable parameters")]
    Detached,

    #[error("no value-proxy entry for state {0:?}")]
    MissingProxy(String),

    #[error("estimator `{estimator}` needs at least 2 trajectories per group, got {got}")]
    GroupTooSmall { estimator: &'static str, got: usize },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
