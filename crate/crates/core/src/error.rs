//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("calibration set is empty")]
    EmptyCalibration,

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("class {class} has no calibration examples (required in class-conditional mode)")]
    EmptyClass { class: usize },

    #[error("non-finite score at row {row}, column {column}")]
    NonFiniteScore { row: usize, column: usize },

    #[error("score panel needs at least one row and two classes, got {rows}x{columns}")]
    DegeneratePanel { rows: usize, columns: usize },

    #[error("p-value numerator {numerator} not in 1..={denominator}")]
    InvalidPValue { numerator: u32, denominator: u32 },

    #[error("p-value vector is empty")]
    EmptyPValueVector,

    #[error("expected {expected} p-values, got {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("lambda must lie strictly inside (0, 1), got {0}")]
    InvalidLambda(f64),

    #[error("quantile index {ell} outside 1..={m}")]
    InvalidQuantileIndex { ell: usize, m: usize },

    #[error("class-conditional Storey estimator needs a batch of size >= 2, got m={m}")]
    BatchTooSmall { m: usize },

    #[error("m0 estimate must be positive or infinite, got {0}")]
    NonPositiveM0(f64),

    #[error("alpha must lie in [0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("{candidates} candidate vectors exceed the enumeration budget of {budget}; use shortcut bounds instead")]
    BudgetExceeded { candidates: u128, budget: u64 },

    #[error("{count} compositions exceed the calibration budget of {budget}")]
    CompositionBudgetExceeded { count: u128, budget: u64 },

    #[error("prefilter is only valid for the bonferroni and simes combiners, got {combiner}")]
    PrefilterUnsupported { combiner: String },

    #[error("estimator {estimator} is not monotone in the p-values; shortcut bounds are unavailable")]
    NonMonotoneEstimator { estimator: String },

    #[error("threshold table has no entry for composition {composition:?}")]
    MissingThreshold { composition: Vec<usize> },

    #[error("count bounds are empty")]
    EmptyBounds,

    #[error("{0}")]
    InvalidConfig(String),

    #[error("csv parse error at row {row}: {message}")]
    Csv { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code convention: 2 for input errors, 3 for exceeded budgets.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::BudgetExceeded { .. } | Error::CompositionBudgetExceeded { .. } => 3,
            _ => 2,
        }
    }
}
