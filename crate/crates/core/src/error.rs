use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("clip '{clip_id}' has {len} frames but at least {needed} are required")]
    ClipTooShort {
        clip_id: String,
        len: usize,
        needed: usize,
    },

    #[error("protocol violation: subjects appear in more than one split: {}", subjects.join(", "))]
    ProtocolViolation { subjects: Vec<String> },

    #[error("split '{split}' is unusable: {detail}")]
    EmptySplit { split: String, detail: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("flow engine unavailable: {0}")]
    EngineUnavailable(String),

    #[error("non-finite values produced by {stage}")]
    NonFinite { stage: String },

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("layer '{requested}' not found; available layers: {}", available.join(", "))]
    LayerNotFound {
        requested: String,
        available: Vec<String>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the failure stems from user input (bad config, bad data,
    /// missing files) rather than a defect or numerical breakdown.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::NonFinite { .. } | Error::Contract(_))
    }
}
