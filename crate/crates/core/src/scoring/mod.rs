//! Per-point anomaly scores, series assembly, quantile thresholds, point
//! adjustment and precision/recall/F1.

mod criterion;
mod evaluate;
mod metrics;
mod threshold;

pub use criterion::{
    anomaly_score, DetectionCriterion, ReconstructionCriterion, SeriesSimilarityCriterion, SimilarityCriterion,
};
pub use evaluate::{
    assemble_series_scores, evaluate, score_series, write_metrics_json, write_scores_csv,
    AnomalyScores, Evaluation, EvaluationReport,
};
pub use metrics::{point_adjust, precision_recall_f1, MetricsReport};
pub use threshold::{flag, threshold_from_quantile, Calibration};

use crate::data::DataError;
use crate::model::ModelError;
use crate::registry::UnknownStrategy;

#[derive(Debug, PartialEq, thiserror::Error)]
pub enum ScoringError {
    #[error("length mismatch: predictions {pred}, truth {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("cannot take a quantile of an empty score population")]
    EmptyPopulation,
    #[error("delta must lie in (0, 100), got {0}")]
    Delta(f64),
    #[error("windows leave position {0} uncovered")]
    Gap(usize),
    #[error("{windows} windows but {scores} score vectors")]
    WindowCount { windows: usize, scores: usize },
    #[error("dataset has no labels; metrics need ground truth")]
    Unlabeled,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Unknown(#[from] UnknownStrategy),
    #[error("io: {0}")]
    Io(String),
}
