use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient frames: need at least {needed}, got {got}")]
    InsufficientFrames { needed: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("degenerate 6D rotation block at frame {frame}, joint {joint}")]
    DegenerateRotation { frame: usize, joint: usize },

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("codec identity mismatch: tokens were produced by {expected}, decoder is {got}")]
    CodecMismatch { expected: String, got: String },

    #[error("matrix is not positive semi-definite (eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("invalid scorer output: {0}")]
    InvalidDistribution(String),

    #[error("session is closed")]
    SessionClosed,

    #[error("{pathway} pathway: {source}")]
    Pathway {
        pathway: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("truncation: needed {needed} bytes at offset {offset}, file has {len}")]
    Truncated { offset: usize, needed: usize, len: usize },

    #[error("CRC mismatch: stored {stored:08x}, computed {computed:08x}")]
    CrcMismatch { stored: u32, computed: u32 },

    #[error("content hash mismatch")]
    HashMismatch,

    #[error("malformed file at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Short machine-readable category, used by the CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InsufficientFrames { .. } => "insufficient_frames",
            Error::InvalidInput(_) => "invalid_input",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::DegenerateRotation { .. } => "degenerate_rotation",
            Error::OutOfRange(_) => "out_of_range",
            Error::CodecMismatch { .. } => "codec_mismatch",
            Error::NotPsd(_) => "not_psd",
            Error::InvalidDistribution(_) => "invalid_distribution",
            Error::SessionClosed => "session_closed",
            Error::Pathway { .. } => "pathway",
            Error::BadMagic { .. } => "bad_magic",
            Error::UnsupportedVersion(_) => "unsupported_version",
            Error::Truncated { .. } => "truncation",
            Error::CrcMismatch { .. } => "crc_mismatch",
            Error::HashMismatch => "hash_mismatch",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn pathway(pathway: &'static str, source: Error) -> Self {
        Error::Pathway {
            pathway,
            source: Box::new(source),
        }
    }
}
