use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mask length mismatch: expected {expected}, got {actual}")]
    MaskLengthMismatch { expected: usize, actual: usize },

    #[error("mask value {value} at position {position} is not 0 or 1")]
    NonBinaryMask { position: usize, value: i64 },

    #[error("label {0:?} is not in the label space")]
    UnknownLabel(String),

    #[error("invalid label space: {0}")]
    InvalidLabelSpace(String),

    #[error("invalid prediction distribution: {0}")]
    InvalidDistribution(String),

    #[error("duplicate example id {0:?}")]
    DuplicateId(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("occlusion rate {0} is outside [0, 1]")]
    InvalidRate(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("predictor adapter unavailable: {0}")]
    AdapterUnavailable(String),

    #[error("adapter protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("adapter reported an error for request {id:?}: {message}")]
    AdapterError { id: Option<String>, message: String },

    #[error("prediction cache is missing {} key(s): {}", .keys.len(), .keys.join(", "))]
    CacheMiss { keys: Vec<String> },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("line {line}: {source}")]
    InvalidRecord {
        line: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing document {0:?}")]
    MissingDocument(String),

    #[error("evidence span [{start}, {end}) out of range for document {docid:?} of length {len}")]
    SpanOutOfRange {
        docid: String,
        start: i64,
        end: i64,
        len: usize,
    },

    #[error("malformed tree: {0}")]
    MalformedTree(String),

    #[error("curve is degenerate: both sufficiency and comprehensiveness ranges are below epsilon")]
    DegenerateCurve,

    #[error("curve lacks the rate {0} needed for shape classification")]
    MissingRate(f64),

    #[error("splits overlap on {} id(s): {}", .0.len(), .0.join(", "))]
    SplitOverlap(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
