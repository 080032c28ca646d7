use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure talking to a remote model service (embedding or LLM).
#[derive(Debug, Clone, Error, PartialEq)]
#[error("{message}")]
pub struct BackendError {
    pub message: String,
    /// True when repeating the call may succeed (timeouts, refused connections, 5xx).
    pub retryable: bool,
}

impl BackendError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            retryable: false,
        }
    }

    pub fn retryable(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            retryable: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("unparseable recipe: {0}")]
    UnparseableRecipe(String),

    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),

    #[error("backend error: {0}")]
    Backend(#[from] BackendError),

    #[error("malformed LLM output: {0}")]
    MalformedLlmOutput(String),

    #[error("invalid interval: {0}")]
    InvalidInterval(String),

    #[error("could not decode image: {0}")]
    Decode(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("fusion weight {0} outside [0, 1]")]
    InvalidWeight(f64),

    #[error("instance too large for exhaustive search: T={rows}, N={cols} (limit 8)")]
    TooLarge { rows: usize, cols: usize },

    #[error("{}{}: {message}", path.display(), line.map(|l| format!(":{l}")).unwrap_or_default())]
    Schema {
        path: PathBuf,
        line: Option<usize>,
        message: String,
    },

    #[error("timestamp {got} s precedes the last observation at {last} s")]
    NonMonotoneTimestamp { last: f64, got: f64 },

    #[error("missing prediction for video {video_id}, segment {segment}, trial {trial}")]
    MissingPrediction {
        video_id: String,
        segment: usize,
        trial: usize,
    },

    #[error("pairing error: {0}")]
    Pairing(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn schema(path: impl Into<PathBuf>, line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
