use serde::{Deserialize, Serialize};

use crate::registry::detection_criteria;

use super::TrainError;

/// Optimization and objective settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the similarity term in `L_c - lambda * L_s`.
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Registered detection criterion used at scoring time (`sim`,
    /// `sim-series` or `recon`).
    pub criterion: String,
    pub use_recon_loss: bool,
    pub use_sim_loss: bool,
    /// Keep dictionary and prototype tensors fixed.
    pub transfer_freeze: bool,
    /// Optional global gradient-norm clip.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            lr: 1e-4,
            epochs: 10,
            batch_size: 64,
            seed: 0,
            criterion: "sim".into(),
            use_recon_loss: true,
            use_sim_loss: true,
            transfer_freeze: false,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.validate_inner(false)
    }

    /// Same as [`Self::validate`] but accepts `epochs = 0`, which transfer
    /// uses to produce an untrained target model around a loaded dictionary.
    pub fn validate_allow_zero_epochs(&self) -> Result<(), TrainError> {
        self.validate_inner(true)
    }

    fn validate_inner(&self, zero_epochs_ok: bool) -> Result<(), TrainError> {
        let err = |key: &str, msg: String| Err(TrainError::Config { key: key.into(), msg });
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return err("lambda", format!("must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return err("lr", format!("must be positive, got {}", self.lr));
        }
        if self.epochs == 0 && !zero_epochs_ok {
            return err("epochs", "must be at least 1".into());
        }
        if self.batch_size == 0 {
            return err("batch_size", "must be at least 1".into());
        }
        if !self.use_recon_loss && !self.use_sim_loss {
            return err("use_recon_loss", "at least one loss term must be enabled".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return err("grad_clip", format!("must be positive, got {c}"));
            }
        }
        if let Err(e) = detection_criteria().resolve(&self.criterion) {
            return err("criterion", e.to_string());
        }
        Ok(())
    }
}
