use serde::{Deserialize, Serialize};

use crate::numerics::{derive_seed, Rng, Tensor};

use super::DataError;

pub const MAX_MASK_ATTEMPTS: u64 = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    /// Per-entry masking probability, in `[0, 1)`.
    pub ratio: f64,
    pub seed: u64,
}

/// Boolean `[rows x cols]` mask; `true` marks a hidden entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn none(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn from_bits(rows: usize, cols: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), rows * cols);
        Self { rows, cols, bits }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_masked(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.cols + c]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn has_full_row(&self) -> bool {
        (0..self.rows).any(|r| (0..self.cols).all(|c| self.is_masked(r, c)))
    }

    pub fn has_full_col(&self) -> bool {
        (0..self.cols).any(|c| (0..self.rows).all(|r| self.is_masked(r, c)))
    }

    /// Neither a whole timestep nor a whole channel is hidden.
    pub fn is_admissible(&self) -> bool {
        !self.has_full_row() && !self.has_full_col()
    }
}

/// Draws an admissible mask for `window`.
///
/// Entries are masked independently with probability `spec.ratio`. A draw
/// that hides a whole timestep or a whole channel is discarded and redrawn
/// from a fresh sub-seed. Values are returned unchanged; substitution of
/// masked entries happens after instance normalization.
pub fn apply_mask(window: &Tensor, spec: MaskSpec) -> Result<(Tensor, Mask), DataError> {
    if !(0.0..1.0).contains(&spec.ratio) {
        return Err(DataError::MaskRatio(spec.ratio));
    }
    let (rows, cols) = (window.rows(), window.cols());
    if spec.ratio == 0.0 {
        return Ok((window.clone(), Mask::none(rows, cols)));
    }
    for attempt in 0..MAX_MASK_ATTEMPTS {
        let mut rng = Rng::new(derive_seed(spec.seed, attempt));
        let bits = (0..rows * cols).map(|_| rng.bernoulli(spec.ratio)).collect();
        let mask = Mask { rows, cols, bits };
        if mask.is_admissible() {
            return Ok((window.clone(), mask));
        }
    }
    Err(DataError::MaskRejected {
        ratio: spec.ratio,
        attempts: MAX_MASK_ATTEMPTS,
    })
}
