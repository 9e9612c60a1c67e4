use serde::{Deserialize, Serialize};

use crate::data::Mask;
use crate::numerics::Tensor;

use super::config::NORM_EPS;

/// Per-channel statistics of one window, kept for exact inversion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// `std + eps`, the divisor used by the forward map.
    pub fn scale(&self) -> Vec<f64> {
        self.std.iter().map(|s| s + NORM_EPS).collect()
    }
}

/// Instance normalization of a `[T x d]` window.
///
/// Mean and (population) standard deviation are taken per channel over the
/// unmasked entries; output is `(x - mean) / (std + 1e-5)` and masked entries
/// are then set to zero.
pub fn instance_normalize(window: &Tensor, mask: Option<&Mask>) -> (Tensor, NormStats) {
    let (t, d) = (window.rows(), window.cols());
    let x = window.data();
    let masked = |r: usize, c: usize| mask.is_some_and(|m| m.is_masked(r, c));
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for c in 0..d {
        let vals: Vec<f64> = (0..t).filter(|&r| !masked(r, c)).map(|r| x[r * d + c]).collect();
        let n = vals.len().max(1) as f64;
        let mu = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        mean[c] = mu;
        std[c] = var.sqrt();
    }
    let mut out = vec![0.0; t * d];
    for r in 0..t {
        for c in 0..d {
            out[r * d + c] = if masked(r, c) {
                0.0
            } else {
                (x[r * d + c] - mean[c]) / (std[c] + NORM_EPS)
            };
        }
    }
    (
        Tensor::matrix(t, d, out).expect("window shape"),
        NormStats { mean, std },
    )
}

/// Exact affine inverse of [`instance_normalize`] on unmasked entries.
pub fn denormalize(normalized: &Tensor, stats: &NormStats) -> Tensor {
    let d = normalized.cols();
    let scale = stats.scale();
    let data = normalized
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v * scale[i % d] + stats.mean[i % d])
        .collect();
    Tensor::new(normalized.shape().to_vec(), data).expect("same shape")
}
