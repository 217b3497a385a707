use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures while parsing a PGM byte stream.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PgmError {
    #[error("bad magic number, expected P2 or P5")]
    BadMagic,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported maxval {0} (must be 1..=255)")]
    UnsupportedMaxval(u32),
    #[error("truncated payload: expected {expected} samples, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("sample value {value} exceeds maxval {maxval}")]
    SampleOutOfRange { value: u32, maxval: u32 },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Pgm(#[from] PgmError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid image dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },

    #[error("intensity {value} at pixel {index} is not a binary plane value (0 or 255)")]
    NotBinary { index: usize, value: u8 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("held-out split is empty")]
    EmptyHoldout,

    #[error("image {path} is {width}x{height}, smaller than the {side}x{side} patch")]
    ImageTooSmall {
        path: PathBuf,
        width: usize,
        height: usize,
        side: usize,
    },

    #[error("bitplane {lambda} requested but stack depth is {depth}")]
    DepthExceeded { lambda: usize, depth: usize },

    #[error("batch is empty")]
    EmptyBatch,

    #[error("non-finite objective at newton iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
