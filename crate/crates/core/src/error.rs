use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ForteError>;

/// Every failure the library can report.
///
/// Variants fall in three families, which the CLI maps onto exit codes:
/// data errors (bad files, malformed matrices), parameter errors (values that
/// violate an operation's preconditions) and numeric failures.
#[derive(Debug, Error)]
pub enum ForteError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("ragged row {row}: expected {expected} columns, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}, column {col}: cannot parse {text:?} as a number")]
    BadCell {
        row: usize,
        col: usize,
        text: String,
    },

    #[error("row {row}, column {col}: non-finite value")]
    NonFinite { row: usize, col: usize },

    #[error("bad magic bytes {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("malformed model section: {0}")]
    MalformedModel(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid k = {k}: {reason}")]
    InvalidK { k: usize, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl ForteError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ForteError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        ForteError::InvalidParameter(msg.into())
    }

    /// True for failures caused by the contents of input files.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            ForteError::Io { .. }
                | ForteError::RaggedRow { .. }
                | ForteError::BadCell { .. }
                | ForteError::NonFinite { .. }
                | ForteError::BadMagic { .. }
                | ForteError::VersionMismatch { .. }
                | ForteError::Truncated { .. }
                | ForteError::MalformedModel(_)
                | ForteError::Config(_)
        )
    }
}
