use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {what} (got {value})")]
    Domain { what: &'static str, value: f64 },

    #[error("degenerate vector: norm {norm:e} is below {threshold:e}")]
    DegenerateVector { norm: f64, threshold: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("vector is not unit-norm (norm {norm})")]
    NotUnit { norm: f64 },

    #[error("antipodal endpoints: the great circle through them is not unique")]
    Antipodal,

    #[error("composition parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("shape mismatch in {context}: {left:?} vs {right:?}")]
    Shape {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("bernoulli target {value} at index {index} is not 0 or 1")]
    InvalidTarget { index: usize, value: f64 },

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("degenerate posterior direction for batch row {row}, shell {shell}")]
    DegeneratePosterior { row: usize, shell: usize },

    #[error("bad IDX magic 0x{magic:08x} (expected 0x00000801 or 0x00000803)")]
    BadMagic { magic: u32 },

    #[error("truncated file at byte offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },

    #[error("dimension overflow in header at byte offset {offset}")]
    DimensionOverflow { offset: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(what: &'static str, value: f64) -> Self {
        Error::Domain { what, value }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
