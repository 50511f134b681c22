use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = ScanError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("invalid generation spec: {0}")]
    InvalidSpec(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("empty loss table")]
    EmptyTable,
    #[error("pruning ratio {0} outside the allowed range")]
    RatioOutOfRange(f64),
    #[error("sample id {id} appears in more than one batch of epoch {epoch}")]
    DuplicateCandidate { id: u32, epoch: usize },
    #[error("sample id {id} out of range for dataset of size {n}")]
    IdOutOfRange { id: u32, n: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("empty coreset")]
    EmptyCoreset,
    #[error("dataset has a single class")]
    SingleClass,
    #[error("union of the id sets is empty")]
    EmptyUnion,
    #[error("overlap needs at least two sets, got {0}")]
    TooFewSets(usize),
    #[error("dataset size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("bad magic bytes {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated: needed {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ScanError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ScanError::Io { path: path.into(), source }
    }
}
