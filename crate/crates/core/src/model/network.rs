use std::sync::Arc;

use crate::data::Mask;
use crate::numerics::{Tape, Tensor, Var};
use crate::registry::{attention_mechanisms, similarity_metrics};

use super::attention::{AttentionMechanism, AttentionOutput};
use super::config::{Activation, ModelConfig, NORM_EPS};
use super::norm::{instance_normalize, NormStats};
use super::params::{Init, ParamRole, ParamSpec, ParamStore};
use super::similarity::SimilarityMetric;
use super::ModelError;

/// Index layout of one encoder layer inside the flat parameter list.
#[derive(Clone, Debug)]
struct LayerLayout {
    attention: std::ops::Range<usize>,
    norm1: (usize, usize),
    ffn: [usize; 4],
    norm2: (usize, usize),
}

#[derive(Clone, Debug)]
struct Layout {
    embed: (usize, usize),
    layers: Vec<LayerLayout>,
    head: (usize, usize),
}

/// Per-layer parameter handles on a tape.
#[derive(Clone, Debug)]
pub struct LayerVars {
    pub attention: Vec<Var>,
    pub norm1: (Var, Var),
    /// `w1, b1, w2, b2`
    pub ffn: [Var; 4],
    pub norm2: (Var, Var),
}

/// Taped forward pass over one window.
#[derive(Clone, Debug)]
pub struct TapedForward {
    /// Reconstruction in raw (denormalized) units, `[T x d]`.
    pub reconstruction: Var,
    /// Per-layer similarity, each of length T, summed over heads.
    pub layer_similarity: Vec<Var>,
    pub head_similarity: Vec<Vec<Var>>,
    pub maps: Vec<Vec<Var>>,
    pub stats: NormStats,
}

/// Forward results as plain values.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub reconstruction: Tensor,
    /// `[L][T]` head-summed similarity per layer.
    pub similarity: Vec<Vec<f64>>,
    /// `[L][H]` per-head `[T x P]` similarity matrices.
    pub head_similarity: Vec<Vec<Tensor>>,
    /// `[L][H]` attention maps, when requested.
    pub maps: Option<Vec<Vec<Tensor>>>,
    pub stats: NormStats,
}

impl ForwardOutput {
    /// Per-point similarity summed over the given 0-based layers.
    pub fn total_similarity(&self, layers: &[usize]) -> Vec<f64> {
        let t = self.similarity.first().map_or(0, Vec::len);
        let mut total = vec![0.0; t];
        for &l in layers {
            for (acc, v) in total.iter_mut().zip(&self.similarity[l]) {
                *acc += v;
            }
        }
        total
    }
}

/// The dictionary-enhanced transformer: instance normalization, a linear
/// embedding, `L` attention + feed-forward layers and a linear
/// reconstruction head.
#[derive(Clone)]
pub struct Gdformer {
    config: ModelConfig,
    params: ParamStore,
    attention: Arc<dyn AttentionMechanism>,
    metric: Arc<dyn SimilarityMetric>,
    layout: Layout,
}

impl std::fmt::Debug for Gdformer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gdformer")
            .field("config", &self.config)
            .field("params", &self.params.total_params())
            .finish()
    }
}

/// Full parameter list for `cfg`, in the canonical order.
pub fn param_specs(cfg: &ModelConfig, attention: &dyn AttentionMechanism) -> Vec<ParamSpec> {
    let (d, dm, f) = (cfg.channels, cfg.model_dim, cfg.ffn_dim);
    let mut specs = vec![
        ParamSpec::new("embed.weight", &[d, dm], Init::XavierUniform, ParamRole::Embedding),
        ParamSpec::new("embed.bias", &[dm], Init::Zeros, ParamRole::Embedding),
    ];
    for l in 0..cfg.layers {
        for mut s in attention.param_specs(cfg) {
            s.name = format!("layers.{l}.attn.{}", s.name);
            specs.push(s);
        }
        let p = |name: &str, shape: &[usize], init, role| {
            ParamSpec::new(format!("layers.{l}.{name}"), shape, init, role)
        };
        specs.extend([
            p("norm1.gain", &[dm], Init::Ones, ParamRole::Norm),
            p("norm1.bias", &[dm], Init::Zeros, ParamRole::Norm),
            p("ffn.w1", &[dm, f], Init::XavierUniform, ParamRole::FeedForward),
            p("ffn.b1", &[f], Init::Zeros, ParamRole::FeedForward),
            p("ffn.w2", &[f, dm], Init::XavierUniform, ParamRole::FeedForward),
            p("ffn.b2", &[dm], Init::Zeros, ParamRole::FeedForward),
            p("norm2.gain", &[dm], Init::Ones, ParamRole::Norm),
            p("norm2.bias", &[dm], Init::Zeros, ParamRole::Norm),
        ]);
    }
    specs.push(ParamSpec::new("head.weight", &[dm, d], Init::XavierUniform, ParamRole::Reconstruction));
    specs.push(ParamSpec::new("head.bias", &[d], Init::Zeros, ParamRole::Reconstruction));
    specs
}

fn layout(cfg: &ModelConfig, attn_count: usize) -> Layout {
    let mut i = 2;
    let mut layers = Vec::with_capacity(cfg.layers);
    for _ in 0..cfg.layers {
        let attention = i..i + attn_count;
        i += attn_count;
        layers.push(LayerLayout {
            attention,
            norm1: (i, i + 1),
            ffn: [i + 2, i + 3, i + 4, i + 5],
            norm2: (i + 6, i + 7),
        });
        i += 8;
    }
    Layout {
        embed: (0, 1),
        layers,
        head: (i, i + 1),
    }
}

impl Gdformer {
    /// Builds a model with freshly initialized parameters.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let attention = attention_mechanisms().resolve(&config.attention)?;
        let specs = param_specs(&config, attention.as_ref());
        let params = ParamStore::initialize(specs, seed);
        Self::assemble(config, params, attention)
    }

    /// Builds a model around existing parameter tensors (e.g. a checkpoint).
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        config.validate()?;
        let attention = attention_mechanisms().resolve(&config.attention)?;
        let specs = param_specs(&config, attention.as_ref());
        if specs.len() != tensors.len() {
            return Err(ModelError::ParamMismatch(format!(
                "expected {} tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for (s, t) in specs.iter().zip(&tensors) {
            if s.shape != t.shape() {
                return Err(ModelError::ParamMismatch(format!(
                    "{}: expected shape {:?}, got {:?}",
                    s.name,
                    s.shape,
                    t.shape()
                )));
            }
        }
        Self::assemble(config, ParamStore::from_parts(specs, tensors), attention)
    }

    fn assemble(
        config: ModelConfig,
        params: ParamStore,
        attention: Arc<dyn AttentionMechanism>,
    ) -> Result<Self, ModelError> {
        let metric = similarity_metrics().resolve(&config.similarity)?;
        let attn_count = attention.param_specs(&config).len();
        let layout = layout(&config, attn_count);
        Ok(Self {
            config,
            params,
            attention,
            metric,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn attention(&self) -> &dyn AttentionMechanism {
        self.attention.as_ref()
    }

    pub fn metric(&self) -> &dyn SimilarityMetric {
        self.metric.as_ref()
    }

    /// Records every parameter as a leaf; `trainable` leaves require grad.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .tensors()
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    pub fn layer_vars(&self, vars: &[Var], layer: usize) -> LayerVars {
        let ly = &self.layout.layers[layer];
        LayerVars {
            attention: vars[ly.attention.clone()].to_vec(),
            norm1: (vars[ly.norm1.0], vars[ly.norm1.1]),
            ffn: ly.ffn.map(|i| vars[i]),
            norm2: (vars[ly.norm2.0], vars[ly.norm2.1]),
        }
    }

    pub fn embed_vars(&self, vars: &[Var]) -> (Var, Var) {
        (vars[self.layout.embed.0], vars[self.layout.embed.1])
    }

    pub fn head_vars(&self, vars: &[Var]) -> (Var, Var) {
        (vars[self.layout.head.0], vars[self.layout.head.1])
    }

    /// Normalize, zero masked entries, embed, run the encoder stack, project
    /// back to `d` channels and denormalize.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        window: &Tensor,
        mask: Option<&Mask>,
    ) -> Result<TapedForward, ModelError> {
        let cfg = &self.config;
        if window.shape() != [cfg.window_len, cfg.channels] {
            return Err(ModelError::WindowShape {
                expected: vec![cfg.window_len, cfg.channels],
                got: window.shape().to_vec(),
            });
        }
        let (normalized, stats) = instance_normalize(window, mask);
        let input = tape.constant(normalized);
        let (w_e, b_e) = self.embed_vars(vars);
        let mut x = embed(tape, input, w_e, b_e)?;

        let mut layer_similarity = Vec::with_capacity(cfg.layers);
        let mut head_similarity = Vec::with_capacity(cfg.layers);
        let mut maps = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let lv = self.layer_vars(vars, l);
            let (next, attn) = encoder_layer(tape, x, &lv, cfg, self.attention.as_ref(), self.metric.as_ref())?;
            x = next;
            layer_similarity.push(attn.similarity);
            head_similarity.push(attn.head_similarity);
            maps.push(attn.maps);
        }

        let (w_o, b_o) = self.head_vars(vars);
        let projected = tape.matmul(x, w_o)?;
        let projected = tape.add_row(projected, b_o)?;
        let reconstruction = tape.col_affine(projected, &stats.scale(), &stats.mean)?;
        Ok(TapedForward {
            reconstruction,
            layer_similarity,
            head_similarity,
            maps,
            stats,
        })
    }

    /// Inference forward pass (no gradients).
    pub fn forward(&self, window: &Tensor, mask: Option<&Mask>, keep_maps: bool) -> Result<ForwardOutput, ModelError> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let out = self.forward_on_tape(&mut tape, &vars, window, mask)?;
        Ok(ForwardOutput {
            reconstruction: tape.value(out.reconstruction).clone(),
            similarity: out
                .layer_similarity
                .iter()
                .map(|&v| tape.value(v).data().to_vec())
                .collect(),
            head_similarity: out
                .head_similarity
                .iter()
                .map(|hs| hs.iter().map(|&v| tape.value(v).clone()).collect())
                .collect(),
            maps: keep_maps.then(|| {
                out.maps
                    .iter()
                    .map(|hs| hs.iter().map(|&v| tape.value(v).clone()).collect())
                    .collect()
            }),
            stats: out.stats,
        })
    }

    /// Parameters of one attention block, enumerated from its specs.
    pub fn attention_block_param_count(&self) -> usize {
        self.attention.block_param_count(&self.config)
    }
}

/// Linear input embedding `x W_e + b_e`, one token per timestep.
pub fn embed(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var, crate::numerics::NumericsError> {
    let h = tape.matmul(x, weight)?;
    tape.add_row(h, bias)
}

/// One encoder layer:
/// `U = LN(X + Attn(X))`, `X' = LN(U + FFN(U))`,
/// `FFN(U) = act(U W1 + b1) W2 + b2`.
pub fn encoder_layer(
    tape: &mut Tape,
    x: Var,
    lv: &LayerVars,
    cfg: &ModelConfig,
    attention: &dyn AttentionMechanism,
    metric: &dyn SimilarityMetric,
) -> Result<(Var, AttentionOutput), crate::numerics::NumericsError> {
    let attn = attention.forward(tape, x, &lv.attention, cfg, metric)?;
    let res = tape.add(x, attn.output)?;
    let u = tape.layer_norm(res, lv.norm1.0, lv.norm1.1, NORM_EPS)?;

    let [w1, b1, w2, b2] = lv.ffn;
    let hidden = tape.matmul(u, w1)?;
    let hidden = tape.add_row(hidden, b1)?;
    let hidden = match cfg.activation {
        Activation::Relu => tape.relu(hidden),
        Activation::Gelu => tape.gelu(hidden),
    };
    let ff = tape.matmul(hidden, w2)?;
    let ff = tape.add_row(ff, b2)?;
    let res = tape.add(u, ff)?;
    let out = tape.layer_norm(res, lv.norm2.0, lv.norm2.1, NORM_EPS)?;
    Ok((out, attn))
}
