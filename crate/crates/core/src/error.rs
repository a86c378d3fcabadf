use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A tensor or layer received extents it cannot work with.
    InvalidShape {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    InvalidArgument(String),
    /// A weight row too short to normalize.
    DegenerateRow {
        row: usize,
        norm: f64,
    },
    /// Riemannian operations require a unit-norm row.
    NotUnitRow {
        norm: f64,
    },
    NonFiniteGradient {
        layer: usize,
    },
    MissingCache {
        layer: usize,
    },
    UninitializedStats {
        layer: usize,
    },
    /// Batch statistics need at least two examples.
    DegenerateBatch {
        layer: usize,
        batch: usize,
    },
    DegenerateChannel {
        channel: usize,
    },
    UnstableStep {
        eta_lambda: f64,
    },
    CorruptFile {
        expected: usize,
        actual: usize,
    },
    CorruptRecord {
        index: usize,
        label: usize,
        class_count: usize,
    },
}

impl Error {
    /// Stable machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidShape { .. } => "invalid-shape",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::DegenerateRow { .. } => "degenerate-row",
            Error::NotUnitRow { .. } => "precondition",
            Error::NonFiniteGradient { .. } => "non-finite-gradient",
            Error::MissingCache { .. } => "missing-cache",
            Error::UninitializedStats { .. } => "uninitialized-stats",
            Error::DegenerateBatch { .. } => "degenerate-batch",
            Error::DegenerateChannel { .. } => "degenerate-channel",
            Error::UnstableStep { .. } => "unstable-step",
            Error::CorruptFile { .. } => "corrupt-file",
            Error::CorruptRecord { .. } => "corrupt-record",
        }
    }

    pub(crate) fn shape(context: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Error::InvalidShape { context, expected: expected.to_vec(), actual: actual.to_vec() }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidShape { context, expected, actual } => {
                write!(f, "{context}: invalid shape {actual:?} (expected {expected:?})")
            }
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::DegenerateRow { row, norm } => {
                write!(f, "row {row} has norm {norm:e} and cannot be normalized")
            }
            Error::NotUnitRow { norm } => write!(f, "weight row must have unit norm, got {norm}"),
            Error::NonFiniteGradient { layer } => write!(f, "non-finite gradient in layer {layer}"),
            Error::MissingCache { layer } => {
                write!(f, "layer {layer} has no forward cache; run a train-mode forward first")
            }
            Error::UninitializedStats { layer } => {
                write!(f, "batch-norm layer {layer} has no running statistics")
            }
            Error::DegenerateBatch { layer, batch } => {
                write!(f, "batch-norm layer {layer} needs at least 2 examples in train mode, got {batch}")
            }
            Error::DegenerateChannel { channel } => write!(f, "channel {channel} has zero variance"),
            Error::UnstableStep { eta_lambda } => {
                write!(f, "2*eta*lambda = {} must be below 1", 2.0 * eta_lambda)
            }
            Error::CorruptFile { expected, actual } => {
                write!(f, "corrupt file: expected {expected} bytes, found {actual}")
            }
            Error::CorruptRecord { index, label, class_count } => {
                write!(f, "record {index} has label {label} outside [0, {class_count})")
            }
        }
    }
}

impl core::error::Error for Error {}
