use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown dataset name `{0}` (expected MNIST, FashionMNIST, EMNIST, CIFAR10 or CIFAR100)")]
    UnknownDataset(String),

    #[error("download failed for {url}: {reason}")]
    Download { url: String, reason: String },

    #[error("checksum mismatch for {path:?}: expected {expected}, got {actual}")]
    ChecksumMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("{path:?}: bad IDX magic number 0x{magic:08x} (expected 0x{expected:08x})")]
    BadMagic {
        path: PathBuf,
        magic: u32,
        expected: u32,
    },

    #[error("image file declares {images} samples but label file declares {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path:?}: truncated payload (expected {expected} bytes, found {actual})")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("{path:?}: file length {len} is not a multiple of the {record} byte record size")]
    BadRecordLength {
        path: PathBuf,
        len: usize,
        record: usize,
    },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("split fraction {0} outside the open interval (0, 1)")]
    BadFraction(f64),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid region count {k}: {reason}")]
    BadRegionCount { k: usize, reason: String },

    #[error("Dirichlet alpha must be positive, got {0}")]
    BadAlpha(f64),

    #[error("partition matrix is {rows}x{cols} but {expected_rows} regions x {expected_cols} labels required")]
    MatrixShape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },

    #[error("partition matrix entry ({row},{col}) = {value} is negative")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("partition matrix column {col} sums to {sum}, expected 1")]
    ColumnSum { col: usize, sum: f64 },

    #[error("label map does not cover label {0}")]
    UncoveredLabel(usize),

    #[error("label map for region {0} is empty")]
    EmptyLabelSet(usize),

    #[error("region {region} would receive no samples")]
    EmptyRegion { region: usize },

    #[error("region {region} has {samples} samples but {devices} devices")]
    TooManyDevices {
        region: usize,
        samples: usize,
        devices: usize,
    },

    #[error("region {0} was assigned zero devices")]
    ZeroDevices(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite gradient entry at index {0}")]
    NonFiniteGradient(usize),

    #[error("no local updates to aggregate")]
    NoUpdates,

    #[error("scaffold control variate length {got} does not match parameter length {expected}")]
    ControlVariateLength { got: usize, expected: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no round records to write")]
    NoRecords,

    #[error("no reports to summarize")]
    NoReports,

    #[error("malformed CSV {path:?}: {reason}")]
    MalformedCsv { path: PathBuf, reason: String },

    #[error("duplicate configuration row: {0}")]
    DuplicateRow(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by invalid user configuration rather than runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::UnknownDataset(_)
                | Error::BadFraction(_)
                | Error::BadRegionCount { .. }
                | Error::BadAlpha(_)
                | Error::MatrixShape { .. }
                | Error::NegativeEntry { .. }
                | Error::ColumnSum { .. }
                | Error::UncoveredLabel(_)
                | Error::EmptyLabelSet(_)
                | Error::DuplicateRow(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
