//! Series ingestion, windowing, constrained masking and a synthetic
//! generator with injected anomalies.

mod dataset;
mod mask;
mod synth;
mod window;

pub use dataset::TimeSeriesDataset;
pub use mask::{apply_mask, Mask, MaskSpec, MAX_MASK_ATTEMPTS};
pub use synth::{generate_synthetic, generate_with_events, AnomalyEvent, SynthSpec};
pub use window::{make_detection_windows, make_windows, WindowSet};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("io: {0}")]
    Io(String),
    #[error("line {line}: expected {expected} columns, found {found}")]
    Ragged {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column {col}: non-numeric cell {cell:?}")]
    NonNumeric { line: usize, col: usize, cell: String },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("label file has {labels} rows but the series has {rows}")]
    LabelLength { labels: usize, rows: usize },
    #[error("labels must be 0 or 1")]
    LabelValue,
    #[error("dataset is unlabeled")]
    Unlabeled,
    #[error("empty input file")]
    Empty,
    #[error("expected a [timesteps x channels] matrix, got shape {0:?}")]
    Shape(Vec<usize>),
    #[error("window length must be at least 1")]
    ZeroWindow,
    #[error("series of length {len} is shorter than the window length {window}; no windows")]
    TooShort { len: usize, window: usize },
    #[error("mask ratio {0} must lie in [0, 1)")]
    MaskRatio(f64),
    #[error("mask ratio {ratio}: no admissible mask after {attempts} draws")]
    MaskRejected { ratio: f64, attempts: u64 },
    #[error("synthetic spec: {0}")]
    Synth(String),
}
