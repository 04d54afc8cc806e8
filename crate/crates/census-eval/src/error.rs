//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by loading, validation and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric field violated a domain invariant (score range, radius sign, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A row in an input file could not be parsed.
    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    /// Points from more than one image were passed to a per-image operation.
    #[error("mixed image ids: expected {expected:?}, found {found:?}")]
    MixedImageIds { expected: String, found: String },

    /// A point or detection references an image that is not part of the dataset.
    #[error("unknown image id {0:?}")]
    UnknownImage(String),

    /// The exhaustive matching oracle was handed an instance above its size cap.
    #[error("oracle instance too large: {ground_truth} ground truths x {detections} detections (cap {cap})")]
    InstanceTooLarge {
        ground_truth: usize,
        detections: usize,
        cap: usize,
    },

    /// Grid or weight-map shapes do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A probability cell does not sum to one within tolerance.
    #[error("cell ({row},{col}) is not a probability simplex: sum = {sum}")]
    NonSimplex { row: usize, col: usize, sum: f64 },

    /// The requested split fractions cannot be honored by this dataset.
    #[error("infeasible split: {0}")]
    InfeasibleSplit(String),

    /// A patch layout cannot cover the image.
    #[error("patch layout cannot cover image: {0}")]
    Coverage(String),

    /// A class has zero observations; inverse-frequency weights are undefined.
    /// Use the add-one smoothed variant if sparse counts are expected.
    #[error("class {0:?} has zero count; inverse-frequency weight undefined (consider add-one smoothing)")]
    ZeroClassCount(crate::model::ClassLabel),

    /// The simulator could not place animals at the requested density.
    #[error("infeasible placement: {0}")]
    InfeasiblePlacement(String),

    /// A ledger was replayed against reports from a different campaign.
    #[error("ledger mismatch: {0}")]
    LedgerMismatch(String),

    /// A binary grid container had a bad magic prefix or truncated payload.
    #[error("bad grid container: {0}")]
    BadContainer(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
