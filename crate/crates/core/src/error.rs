use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TsnnError>;

/// Broad category of a failure, used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or arguments supplied by the caller.
    Usage,
    /// Input files or series that cannot be used as given.
    Data,
    /// Failures while building banks or predicting.
    Computation,
}

#[derive(Debug, Error)]
pub enum TsnnError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("non-finite value {value:?} at row {row}, column {column}")]
    NonFinite { row: usize, column: usize, value: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("split too short: {available} steps available, {required} required")]
    SplitTooShort { available: usize, required: usize },

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("value {value} outside [0, 1] for a normalised-distance scaling")]
    OutOfDomain { value: f64 },

    #[error("similarity scores sum to zero")]
    ZeroScoreSum,

    #[error("all kernel weights underflowed to zero")]
    KernelUnderflow,

    #[error("no layer-1 candidates for periodic step {periodic_step}")]
    UnmatchedPeriodicStep { periodic_step: usize },

    #[error("requested {requested} layers but only {available} are available")]
    LayerOutOfRange { requested: usize, available: usize },

    #[error("bank has no raw layer-1 residuals")]
    MissingLayerOne,

    #[error("bank file {path}: {message}")]
    BankFormat { path: PathBuf, message: String },

    #[error("trace was captured without similarity scores")]
    MissingScores,

    #[error("no start timestamp in manifest; weekday aggregation unavailable")]
    MissingTimestamp,
}

impl TsnnError {
    pub fn kind(&self) -> ErrorKind {
        use TsnnError::*;
        match self {
            Config(_) | LayerOutOfRange { .. } => ErrorKind::Usage,
            Io { .. }
            | Csv { .. }
            | Manifest { .. }
            | NonFinite { .. }
            | Dimension(_)
            | SplitTooShort { .. }
            | BankFormat { .. }
            | MissingTimestamp
            | UnmatchedPeriodicStep { .. } => ErrorKind::Data,
            EmptyCandidates
            | LengthMismatch { .. }
            | OutOfDomain { .. }
            | ZeroScoreSum
            | KernelUnderflow
            | MissingLayerOne
            | MissingScores => ErrorKind::Computation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TsnnError::Io { path: path.into(), source }
    }
}
