//! The network: normalization, embedding, attention layers with prototype
//! similarity, and the reconstruction head.

mod attention;
mod config;
mod export;
mod network;
mod norm;
mod params;
mod similarity;

pub use attention::{AttentionMechanism, AttentionOutput, DictionaryAttention, SelfAttention};
pub use config::{Activation, ModelConfig, NORM_EPS};
pub use export::export_attention_maps;
pub use network::{
    embed, encoder_layer, param_specs, ForwardOutput, Gdformer, LayerVars, TapedForward,
};
pub use norm::{denormalize, instance_normalize, NormStats};
pub use params::{Init, ParamRole, ParamSpec, ParamStore};
pub use similarity::{similarity_variant, DotSimilarity, JsSimilarity, KlSimilarity, SimilarityMetric};

use crate::numerics::NumericsError;
use crate::registry::UnknownStrategy;

#[derive(Debug, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Unknown(#[from] UnknownStrategy),
    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),
    #[error("window has shape {got:?}, model expects {expected:?}")]
    WindowShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("export failed: {0}")]
    Io(String),
}
