use std::path::PathBuf;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty series")]
    EmptySeries,

    #[error("day {0} not present in thermal series")]
    MissingDay(u32),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {detail}")]
    Parse { what: String, detail: String },

    #[error("unsupported cube format_version {0}")]
    UnsupportedVersion(u32),

    #[error("array `{array}` has {actual} bytes, expected {expected}")]
    ByteLength {
        array: String,
        expected: u64,
        actual: u64,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite loss at sequence {sequence} of batch")]
    NonFiniteLoss { sequence: usize },

    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        /// Completed epochs before the failure.
        history: Vec<crate::model::EpochRecord>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Data and validation failures, as opposed to usage mistakes.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
