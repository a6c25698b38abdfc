use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("clamp01 is not differentiable and cannot be recorded on a training graph")]
    ClampInGraph,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("graph already consumed by a previous backward pass")]
    GraphConsumed,

    #[error("non-finite value in parameter `{param}` at index {index}")]
    NonFinite { param: String, index: usize },

    #[error("non-finite loss on sample {sample_id}")]
    NonFiniteLoss { sample_id: u64 },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: &'static str, found: Vec<u8> },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated payload: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },

    #[error("dimension overflow: {0:?}")]
    DimensionOverflow(Vec<u64>),

    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),

    #[error("dtype mismatch: expected {expected}, found {found}")]
    DtypeMismatch { expected: &'static str, found: &'static str },

    #[error("malformed {kind}: {msg}")]
    Malformed { kind: &'static str, msg: String },

    #[error("config mismatch: checkpoint was written for `{checkpoint}`, model is `{model}`")]
    ConfigMismatch { checkpoint: String, model: String },

    #[error("checkpoint is missing parameter `{0}`")]
    MissingParameter(String),

    #[error("payload size mismatch for `{name}`: expected {expected} elements, found {found}")]
    PayloadSize { name: String, expected: usize, found: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Shape { op, msg: msg.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
