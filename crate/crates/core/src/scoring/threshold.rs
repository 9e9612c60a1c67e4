use serde::{Deserialize, Serialize};

use super::ScoringError;

/// Which scores form the population the `delta` quantile is taken over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Calibration {
    /// Test-set scores only.
    Test,
    /// Training and test scores pooled.
    #[default]
    Combined,
}

impl std::str::FromStr for Calibration {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "test" => Ok(Self::Test),
            "combined" | "train+test" => Ok(Self::Combined),
            other => Err(format!("unknown calibration {other:?} (expected test or combined)")),
        }
    }
}

/// Threshold such that the top `delta_percent` of `population` lies at or
/// above it: the `ceil(delta% * n)`-th largest value. Values tied with it
/// are all flagged.
pub fn threshold_from_quantile(population: &[f64], delta_percent: f64) -> Result<f64, ScoringError> {
    if !(delta_percent > 0.0 && delta_percent < 100.0) {
        return Err(ScoringError::Delta(delta_percent));
    }
    if population.is_empty() {
        return Err(ScoringError::EmptyPopulation);
    }
    let n = population.len();
    let exact = delta_percent * n as f64 / 100.0;
    // Guard against 10% of 10 landing on 1.0000000000000002.
    let k = if (exact - exact.round()).abs() < 1e-9 {
        exact.round()
    } else {
        exact.ceil()
    };
    let k = (k as usize).clamp(1, n);
    let mut sorted = population.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[k - 1])
}

/// `1` where `score >= threshold`.
pub fn flag(scores: &[f64], threshold: f64) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s >= threshold)).collect()
}
