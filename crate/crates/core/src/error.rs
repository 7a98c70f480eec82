use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty label sequence")]
    EmptyLabelSequence,

    #[error("non-tiling segments: {0}")]
    NonTiling(String),

    #[error("label id {id} is outside the vocabulary (K = {k})")]
    UnknownLabelId { id: u32, k: usize },

    #[error("invalid vocabulary: {0}")]
    Vocab(String),

    #[error("invalid feature matrix: {0}")]
    Features(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    /// Text-format parse failure with a 1-based line number.
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Npy(#[from] NpyError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no label files found in {0}")]
    NoLabelFiles(PathBuf),

    #[error("prediction length mismatch for {video_id}: T_pred = {pred}, T_gt = {gt}")]
    LengthMismatch {
        video_id: String,
        pred: usize,
        gt: usize,
    },

    #[error("length mismatch: {left} vs {right} frames")]
    SequenceLength { left: usize, right: usize },

    #[error("unknown video id {0}")]
    UnknownVideo(String),

    #[error("unknown fold {0}")]
    UnknownFold(String),

    #[error(
        "the vocabulary has no background (\"no action\") label; masking needs one \
         (datasets such as 50Salads have none)"
    )]
    MissingBackground,

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("empty histogram")]
    EmptyHistogram,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model format: {0}")]
    Model(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(source_name: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.to_string(),
            line,
            message: message.into(),
        }
    }
}

/// Failures specific to the NPY container.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum NpyError {
    #[error("bad npy magic")]
    BadMagic,
    #[error("unsupported npy version {0}.{1}")]
    UnsupportedVersion(u8, u8),
    #[error("unsupported npy dtype {0:?}")]
    UnsupportedDtype(String),
    #[error("fortran-order (column-major) npy arrays are not supported")]
    FortranOrder,
    #[error("expected a 2-D array, got rank {0}")]
    BadRank(usize),
    #[error("malformed npy header: {0}")]
    MalformedHeader(String),
    #[error("payload shorter than shape: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("payload longer than shape: expected {expected} bytes, got {actual}")]
    TrailingBytes { expected: usize, actual: usize },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
}
