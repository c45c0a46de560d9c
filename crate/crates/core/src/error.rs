use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the pipeline.
///
/// Variants are grouped by the exit code the CLI reports for them; see
/// [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic, expected {expected:?}")]
    BadMagic { path: PathBuf, expected: &'static str },
    #[error("{path}: truncated file ({detail})")]
    TruncatedFile { path: PathBuf, detail: String },
    #[error("{path}: non-finite value at sample {index}")]
    NonFiniteValues { path: PathBuf, index: usize },
    #[error("{path}: unsupported format ({detail})")]
    UnsupportedFormat { path: PathBuf, detail: String },
    #[error("{path}: non-positive depth {value} at pixel {index}")]
    NonPositiveDepth { path: PathBuf, value: f32, index: usize },
    #[error("{path}: mask values must be 0 or 255, found {value}")]
    InvalidMask { path: PathBuf, value: u16 },
    #[error("{path}: image decode failed: {detail}")]
    Decode { path: PathBuf, detail: String },
    #[error("missing sequence index {index} in {dir}")]
    MissingIndex { dir: PathBuf, index: usize },

    #[error("dimension mismatch: expected {expected:?}, found {found:?} ({context})")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
        context: String,
    },
    #[error("flow field {index} is {found:?}, depth frames are {expected:?}")]
    FlowDimensionMismatch {
        index: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("depth outside the normalized range [{lo}, {hi}]: {value}")]
    UnnormalizedDepth { value: f32, lo: f32, hi: f32 },
    #[error("degenerate depth range: max - min = {span}")]
    DegenerateRange { span: f64 },
    #[error("invalid view count {0}, need at least 2")]
    InvalidViewCount(usize),
    #[error("baseline offset {offset} exceeds the maximum {max}")]
    BaselineOutOfRange { offset: f64, max: f64 },
    #[error("invalid schedule: {0}")]
    InvalidRange(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence length {len} exceeds endpoint limit {limit}")]
    SequenceTooLong { len: usize, limit: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("endpoint reported error {code}: {message}")]
    Remote { code: u32, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit status for this error: 1 invariant violation, 2 I/O, 3 protocol.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::BadMagic { .. }
            | Error::TruncatedFile { .. }
            | Error::NonFiniteValues { .. }
            | Error::UnsupportedFormat { .. }
            | Error::NonPositiveDepth { .. }
            | Error::InvalidMask { .. }
            | Error::Decode { .. }
            | Error::MissingIndex { .. } => 2,
            Error::Protocol(_) | Error::Remote { .. } => 3,
            _ => 1,
        }
    }
}
