//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error enum. Variants are grouped roughly by where they arise:
/// parameter validation, shape/length checks, data-file validation, and
/// numerical failures during fitting.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar or structural argument is outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An input vector has the wrong dimension for the model it is fed to.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A histogram has a different bin count than the consumer requires.
    #[error("histogram bin mismatch: expected {expected} bins, got {got}")]
    BinMismatch { expected: usize, got: usize },

    /// An operation that needs at least one item received none.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// Two parallel slices that must align do not.
    #[error("input lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// AUC (and anything built on it) is undefined when every outcome is
    /// the same class.
    #[error("outcomes contain a single class; AUC is undefined")]
    SingleClass,

    /// A rolling-window size exceeds the number of items.
    #[error("window {window} exceeds item count {n}")]
    WindowTooLarge { window: usize, n: usize },

    /// Training with a positive human-loss weight requires a histogram on
    /// every example.
    #[error("example {index}: histogram required when the human loss weight is positive")]
    MissingHistogram { index: usize },

    /// A loss evaluation with a positive human weight was given no
    /// histogram to compare against.
    #[error("histogram required when the human loss weight is positive")]
    HistogramRequired,

    /// The training loss became NaN or infinite.
    #[error("non-finite loss at example {index}")]
    NonFiniteLoss { index: usize },

    /// An iterative fit failed to converge or produced unusable numbers.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A data file failed validation; `line` is 1-based.
    #[error("line {line}: {reason}")]
    InvalidRecord { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
