use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    #[error("boundary mismatch: {0}")]
    BoundaryMismatch(String),

    #[error("non-finite value produced by layer {layer} ({kind})")]
    Overflow { layer: usize, kind: &'static str },

    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Diverged { iteration: u64, loss: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing statistics: {0}")]
    MissingStats(String),

    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("checkpoint: bad magic {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("checkpoint: unsupported version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint: truncated ({0})")]
    Truncated(String),

    #[error("checkpoint header: {0}")]
    Header(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by the numbers themselves rather than by
    /// bad inputs or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Overflow { .. } | Error::Diverged { .. })
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
