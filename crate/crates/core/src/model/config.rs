use serde::{Deserialize, Serialize};

use crate::registry::{attention_mechanisms, similarity_metrics};

use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Window length T.
    pub window_len: usize,
    /// Input channels d.
    pub channels: usize,
    /// Embedding dimension D; must be a multiple of `heads`.
    pub model_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Dictionary size N.
    pub dict_size: usize,
    /// Prototype count P.
    pub prototypes: usize,
    /// Per-entry masking probability used during training.
    pub mask_ratio: f64,
    pub ffn_dim: usize,
    pub activation: Activation,
    /// Registered attention mechanism name (`dictionary` or `self`).
    pub attention: String,
    /// Registered similarity metric name (`dot`, `kl` or `js`).
    pub similarity: String,
    /// 1-based layers whose similarity enters the loss and the score.
    /// Empty means all layers.
    pub similarity_layers: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window_len: 100,
            channels: 1,
            model_dim: 512,
            layers: 3,
            heads: 8,
            dict_size: 10,
            prototypes: 10,
            mask_ratio: 0.05,
            ffn_dim: 2048,
            activation: Activation::Gelu,
            attention: "dictionary".into(),
            similarity: "dot".into(),
            similarity_layers: Vec::new(),
        }
    }
}

pub const NORM_EPS: f64 = 1e-5;

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads.max(1)
    }

    /// Resolved 0-based similarity layer indices.
    pub fn similarity_layer_indices(&self) -> Vec<usize> {
        if self.similarity_layers.is_empty() {
            (0..self.layers).collect()
        } else {
            self.similarity_layers.iter().map(|l| l - 1).collect()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |key: &str, msg: String| Err(ModelError::Config { key: key.into(), msg });
        if self.window_len < 2 {
            return err("window_len", format!("must be at least 2, got {}", self.window_len));
        }
        for (key, v) in [
            ("channels", self.channels),
            ("model_dim", self.model_dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("dict_size", self.dict_size),
            ("prototypes", self.prototypes),
            ("ffn_dim", self.ffn_dim),
        ] {
            if v == 0 {
                return err(key, "must be at least 1".into());
            }
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return err(
                "model_dim",
                format!(
                    "D={} is not divisible by H={} heads",
                    self.model_dim, self.heads
                ),
            );
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return err("mask_ratio", format!("must lie in [0, 1), got {}", self.mask_ratio));
        }
        if let Err(e) = attention_mechanisms().resolve(&self.attention) {
            return err("attention", e.to_string());
        }
        if let Err(e) = similarity_metrics().resolve(&self.similarity) {
            return err("similarity", e.to_string());
        }
        let mut seen = vec![false; self.layers];
        for &l in &self.similarity_layers {
            if l == 0 || l > self.layers {
                return err(
                    "similarity_layers",
                    format!("layer {l} outside 1..={}", self.layers),
                );
            }
            if std::mem::replace(&mut seen[l - 1], true) {
                return err("similarity_layers", format!("layer {l} listed twice"));
            }
        }
        Ok(())
    }
}
