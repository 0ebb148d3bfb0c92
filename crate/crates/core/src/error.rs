use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Stream(#[from] io::Error),

    #[error("line {line}: malformed header: {reason}")]
    MalformedHeader { line: usize, reason: String },

    #[error("line {line}: expected {expected} components, found {found}")]
    ArityMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: non-numeric component {value:?}")]
    NonNumeric { line: usize, value: String },

    #[error("line {line}: non-finite component {value}")]
    NonFinite { line: usize, value: f64 },

    #[error("line {line}: expected 2 fields, found {found}")]
    FieldCount { line: usize, found: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("invalid binary file: {0}")]
    Format(String),

    #[error("unknown {kind} token {token:?}")]
    UnknownToken { kind: &'static str, token: String },

    #[error("target {0:?} is not in the candidate set")]
    NotACandidate(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular value decomposition failed: {0}")]
    Svd(String),

    #[error("training diverged at epoch {epoch}: {what}")]
    Diverged { epoch: usize, what: String },

    #[error("all {0} grid cells failed")]
    AllCellsFailed(usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
