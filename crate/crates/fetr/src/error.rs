use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] fetr_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("decode error at byte {offset}: {message}")]
    Decode { offset: usize, message: String },
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("{0}")]
    Checkpoint(String),
    #[error("{0}")]
    Mismatch(String),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn decode(offset: usize, message: impl Into<String>) -> Self {
        Error::Decode {
            offset,
            message: message.into(),
        }
    }

    /// Process exit status for this error: 2 for unusable input (missing
    /// paths, bad configuration or data), 3 for a checkpoint that does not
    /// match the data, 4 for an unreadable checkpoint, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Parse { .. } | Error::Decode { .. } => 2,
            Error::Core(fetr_core::Error::Config(_) | fetr_core::Error::Data(_)) => 2,
            Error::Mismatch(_) => 3,
            Error::Checkpoint(_) => 4,
            _ => 1,
        }
    }
}
