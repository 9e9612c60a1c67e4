use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{make_detection_windows, TimeSeriesDataset, WindowSet};
use crate::model::Gdformer;

use super::{
    flag, point_adjust, precision_recall_f1, threshold_from_quantile, Calibration,
    DetectionCriterion, MetricsReport, ScoringError,
};

/// Scores over a whole series, together with the windows that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyScores {
    pub scores: Vec<f64>,
    pub offsets: Vec<usize>,
    pub window_len: usize,
}

/// Threshold, flags and metrics for one labeled series.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub scores: AnomalyScores,
    pub threshold: f64,
    pub delta: f64,
    pub pred_raw: Vec<u8>,
    pub pred_adjusted: Option<Vec<u8>>,
    pub truth: Option<Vec<u8>>,
    pub raw: Option<MetricsReport>,
    pub adjusted: Option<MetricsReport>,
}

/// The metrics JSON document.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_adj: f64,
    pub recall_adj: f64,
    pub f1_adj: f64,
    pub threshold: f64,
    pub delta: f64,
}

impl Evaluation {
    pub fn report(&self) -> Option<EvaluationReport> {
        let (raw, adj) = (self.raw?, self.adjusted?);
        Some(EvaluationReport {
            precision: raw.precision,
            recall: raw.recall,
            f1: raw.f1,
            precision_adj: adj.precision,
            recall_adj: adj.recall,
            f1_adj: adj.f1,
            threshold: self.threshold,
            delta: self.delta,
        })
    }
}

/// Stitches per-window scores back into series order. Where windows overlap
/// the earlier window's scores are kept.
pub fn assemble_series_scores(per_window: &[Vec<f64>], windows: &WindowSet) -> Result<AnomalyScores, ScoringError> {
    if per_window.len() != windows.len() {
        return Err(ScoringError::WindowCount {
            windows: windows.len(),
            scores: per_window.len(),
        });
    }
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.sort_by_key(|&i| windows.offsets[i]);
    let mut scores = Vec::new();
    for i in order {
        let offset = windows.offsets[i];
        if offset > scores.len() {
            return Err(ScoringError::Gap(scores.len()));
        }
        let skip = scores.len() - offset;
        scores.extend(per_window[i].iter().skip(skip));
    }
    Ok(AnomalyScores {
        scores,
        offsets: windows.offsets.clone(),
        window_len: windows.window_len,
    })
}

/// Unmasked forward pass over detection windows covering the whole series.
pub fn score_series(
    model: &Gdformer,
    criterion: &dyn DetectionCriterion,
    ds: &TimeSeriesDataset,
) -> Result<AnomalyScores, ScoringError> {
    let cfg = model.config();
    let windows = make_detection_windows(ds, cfg.window_len)?;
    let layers = cfg.similarity_layer_indices();
    let per_window = windows
        .windows
        .iter()
        .map(|w| {
            let out = model.forward(w, None, false)?;
            Ok(criterion.window_scores(w, &out, &layers))
        })
        .collect::<Result<Vec<_>, ScoringError>>()?;
    let mut scores = assemble_series_scores(&per_window, &windows)?;
    criterion.finish_series(&mut scores.scores);
    Ok(scores)
}

/// Scores `test`, thresholds at the top `delta` percent of the calibration
/// population and, when `test` carries labels, reports raw and
/// point-adjusted metrics. `Calibration::Combined` pools in `train` scores
/// when a training series is supplied.
pub fn evaluate(
    model: &Gdformer,
    criterion: &dyn DetectionCriterion,
    test: &TimeSeriesDataset,
    train: Option<&TimeSeriesDataset>,
    delta: f64,
    calibration: Calibration,
) -> Result<Evaluation, ScoringError> {
    let scores = score_series(model, criterion, test)?;
    let threshold = match (calibration, train) {
        (Calibration::Combined, Some(train)) => {
            let mut population = score_series(model, criterion, train)?.scores;
            population.extend_from_slice(&scores.scores);
            threshold_from_quantile(&population, delta)?
        }
        _ => threshold_from_quantile(&scores.scores, delta)?,
    };
    let pred_raw = flag(&scores.scores, threshold);
    let truth = test.labels().map(|l| l[..scores.scores.len()].to_vec());
    let (pred_adjusted, raw, adjusted) = match &truth {
        Some(t) => {
            let adj = point_adjust(&pred_raw, t)?;
            let raw = precision_recall_f1(&pred_raw, t)?;
            let adjusted = precision_recall_f1(&adj, t)?;
            (Some(adj), Some(raw), Some(adjusted))
        }
        None => (None, None, None),
    };
    Ok(Evaluation {
        scores,
        threshold,
        delta,
        pred_raw,
        pred_adjusted,
        truth,
        raw,
        adjusted,
    })
}

/// `index,score,pred_raw[,pred_adjusted,truth]`
pub fn write_scores_csv(path: &Path, eval: &Evaluation) -> Result<(), ScoringError> {
    let io = |e: std::io::Error| ScoringError::Io(format!("{}: {e}", path.display()));
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    let labeled = eval.pred_adjusted.is_some() && eval.truth.is_some();
    if labeled {
        writeln!(f, "index,score,pred_raw,pred_adjusted,truth").map_err(io)?;
    } else {
        writeln!(f, "index,score,pred_raw").map_err(io)?;
    }
    for (i, (s, p)) in eval.scores.scores.iter().zip(&eval.pred_raw).enumerate() {
        match (&eval.pred_adjusted, &eval.truth) {
            (Some(a), Some(t)) => writeln!(f, "{i},{s:?},{p},{},{}", a[i], t[i]),
            _ => writeln!(f, "{i},{s:?},{p}"),
        }
        .map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn write_metrics_json(path: &Path, eval: &Evaluation) -> Result<EvaluationReport, ScoringError> {
    let report = eval.report().ok_or(ScoringError::Unlabeled)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| ScoringError::Io(e.to_string()))?;
    fs::write(path, json + "\n").map_err(|e| ScoringError::Io(format!("{}: {e}", path.display())))?;
    Ok(report)
}
