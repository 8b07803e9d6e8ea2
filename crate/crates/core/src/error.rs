use std::path::PathBuf;

/// Errors surfaced by every layer of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke an operation's shape or argument contract.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Stored data is inconsistent with its declared geometry.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("truncated file {path}: expected at least {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    /// The external encoder or decoder failed; `log` holds its captured stderr.
    #[error("pipeline error: `{command}` failed ({status}): {log}")]
    Pipeline {
        command: String,
        status: String,
        log: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite loss at iteration {iteration}{}", diagnostic.as_ref().map(|p| format!(" (diagnostic checkpoint: {})", p.display())).unwrap_or_default())]
    NonFiniteLoss {
        iteration: u64,
        diagnostic: Option<PathBuf>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
