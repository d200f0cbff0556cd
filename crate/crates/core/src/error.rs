use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero vector cannot be normalized or compared")]
    ZeroVector,

    #[error("vector contains non-finite values")]
    NonFinite,

    #[error("empty vector")]
    EmptyVector,

    #[error("invalid fusion weights ({w_img}, {w_text}): each must lie in [0, 1] and sum to 1")]
    InvalidWeights { w_img: f64, w_text: f64 },

    #[error("invalid encoder spec: {0}")]
    InvalidEncoderSpec(String),

    #[error("text produced no tokens")]
    EmptyText,

    #[error("text not found in embedding table: {0:?}")]
    UnknownText(String),

    #[error("text of {len} bytes exceeds the {max}-byte request limit")]
    TextTooLong { len: usize, max: usize },

    #[error("embedding service unreachable after {attempts} attempts: {message}")]
    ServiceUnreachable { attempts: u32, message: String },

    #[error("malformed embedding service response: {0}")]
    MalformedResponse(String),

    #[error("embedding service error (status {status}): {message}")]
    RemoteError { status: u16, message: String },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported file version {0}")]
    VersionUnsupported(u16),

    #[error("record data does not match header dimension {0}")]
    DimMismatch(usize),

    #[error("corrupt record {index}: {message}")]
    CorruptRecord { index: u64, message: String },

    #[error("truncated file")]
    TruncatedFile,

    #[error("records mix dimensions {first} and {other}")]
    MixedDims { first: usize, other: usize },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("captions mix dense and sparse kinds")]
    MixedKinds,

    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("line {line}: unknown caption kind {kind:?}")]
    UnknownKind { line: usize, kind: String },

    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("k must be at least 1")]
    InvalidK,

    #[error("query bundle {0:?} has no {1} prediction text")]
    MissingPredictionText(String, &'static str),

    #[error("no item phrases in {0:?}")]
    NoItems(String),

    #[error("candidate id {0:?} is not in the index")]
    UnknownCandidateId(String),

    #[error("ground-truth id {id:?} of query {image_id:?} is not in the index")]
    UnknownGroundTruthId { image_id: String, id: String },

    #[error("no image embedding for {0:?}")]
    MissingImageEmbedding(String),

    #[error("ground truth is empty")]
    EmptyGroundTruth,

    #[error("configuration conflict: {0}")]
    ConfigConflict(String),

    #[error("invalid sweep grid: {0}")]
    InvalidGrid(String),

    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure {
            path: path.into(),
            source,
        }
    }
}
