use crate::model::ForwardOutput;
use crate::numerics::Tensor;
use crate::registry::Named;

/// Turns one window's forward pass into per-point scores, higher meaning
/// more anomalous.
pub trait DetectionCriterion: Named + Send + Sync {
    /// `layers` are the 0-based similarity layers.
    fn window_scores(&self, window: &Tensor, out: &ForwardOutput, layers: &[usize]) -> Vec<f64>;

    /// Applied once to the assembled series. Identity by default.
    fn finish_series(&self, _scores: &mut [f64]) {}
}

/// Softmax over the window of the negated layer/head-summed similarity.
pub struct SimilarityCriterion;

/// Like [`SimilarityCriterion`] but the softmax runs over the whole
/// assembled series instead of each window, so scores from different
/// windows share one normalizer.
pub struct SeriesSimilarityCriterion;

/// Per-point squared reconstruction error summed over channels.
///
/// Left unnormalized so that scores stay comparable across windows.
pub struct ReconstructionCriterion;

impl Named for SimilarityCriterion {
    fn name(&self) -> &'static str {
        "sim"
    }
}

impl Named for SeriesSimilarityCriterion {
    fn name(&self) -> &'static str {
        "sim-series"
    }
}

impl Named for ReconstructionCriterion {
    fn name(&self) -> &'static str {
        "recon"
    }
}

impl DetectionCriterion for SimilarityCriterion {
    fn window_scores(&self, _window: &Tensor, out: &ForwardOutput, layers: &[usize]) -> Vec<f64> {
        anomaly_score(&out.total_similarity(layers))
    }
}

impl DetectionCriterion for SeriesSimilarityCriterion {
    fn window_scores(&self, _window: &Tensor, out: &ForwardOutput, layers: &[usize]) -> Vec<f64> {
        out.total_similarity(layers)
    }

    fn finish_series(&self, scores: &mut [f64]) {
        let soft = anomaly_score(scores);
        scores.copy_from_slice(&soft);
    }
}

impl DetectionCriterion for ReconstructionCriterion {
    fn window_scores(&self, window: &Tensor, out: &ForwardOutput, _layers: &[usize]) -> Vec<f64> {
        let d = window.cols();
        window
            .data()
            .chunks(d)
            .zip(out.reconstruction.data().chunks(d))
            .map(|(x, r)| x.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect()
    }
}

/// `softmax(-s)` over the window positions.
pub fn anomaly_score(similarity_totals: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = similarity_totals.iter().map(|s| -s).collect();
    let max = neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = neg.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_scope_normalizes_over_the_whole_series() {
        let mut s = vec![0.0, 3f64.ln(), 0.0, 3f64.ln()];
        SeriesSimilarityCriterion.finish_series(&mut s);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((s[0] - 0.375).abs() < 1e-15 && (s[1] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn uniform_totals_give_uniform_scores() {
        let s = anomaly_score(&[2.0; 8]);
        assert!(s.iter().all(|v| (v - 0.125).abs() < 1e-15));
    }

    #[test]
    fn analytic_two_point_case() {
        let s = anomaly_score(&[0.0, 3f64.ln()]);
        assert!((s[0] - 0.75).abs() < 1e-15 && (s[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn lowering_similarity_raises_score() {
        let base = [1.0, 2.0, 0.5, 1.5];
        let before = anomaly_score(&base);
        let mut lowered = base;
        lowered[1] -= 0.3;
        let after = anomaly_score(&lowered);
        assert!(after[1] > before[1]);
        for i in [0, 2, 3] {
            assert!(after[i] <= before[i]);
        }
    }
}
