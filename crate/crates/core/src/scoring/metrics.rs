use serde::{Deserialize, Serialize};

use super::ScoringError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn check_len(pred: &[u8], truth: &[u8]) -> Result<(), ScoringError> {
    if pred.len() == truth.len() {
        Ok(())
    } else {
        Err(ScoringError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        })
    }
}

/// Marks every ground-truth segment fully detected when any of its points is
/// predicted. Predictions outside segments are untouched.
pub fn point_adjust(pred: &[u8], truth: &[u8]) -> Result<Vec<u8>, ScoringError> {
    check_len(pred, truth)?;
    let mut out = pred.to_vec();
    let mut start = 0;
    while start < truth.len() {
        if truth[start] == 0 {
            start += 1;
            continue;
        }
        let end = truth[start..]
            .iter()
            .position(|&t| t == 0)
            .map_or(truth.len(), |p| start + p);
        if pred[start..end].iter().any(|&p| p != 0) {
            out[start..end].fill(1);
        }
        start = end;
    }
    Ok(out)
}

/// Pointwise precision, recall and F1; any zero division yields 0.
pub fn precision_recall_f1(pred: &[u8], truth: &[u8]) -> Result<MetricsReport, ScoringError> {
    check_len(pred, truth)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p != 0, t != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MetricsReport {
        precision,
        recall,
        f1,
        tp,
        fp,
        fn_,
    })
}
