use crate::numerics::{NumericsError, Tape, Var};
use crate::registry::Named;

use super::params::{Init, ParamRole, ParamSpec};
use super::similarity::SimilarityMetric;
use super::ModelConfig;

/// Taped result of one attention block.
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    /// Head-concatenated output `[T x D]`.
    pub output: Var,
    /// Per-head attention maps `[T x N]` (or `[T x T]` for self-attention).
    pub maps: Vec<Var>,
    /// Per-head similarity to prototypes `[T x P]`.
    pub head_similarity: Vec<Var>,
    /// Per-point similarity summed over prototypes and heads, length T.
    pub similarity: Var,
}

/// An attention block that also scores each point against learned
/// prototypes.
pub trait AttentionMechanism: Named + Send + Sync {
    /// Parameters of one layer's block, with names relative to the block.
    fn param_specs(&self, cfg: &ModelConfig) -> Vec<ParamSpec>;

    /// `params` holds one var per entry of [`Self::param_specs`], in order.
    fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        params: &[Var],
        cfg: &ModelConfig,
        metric: &dyn SimilarityMetric,
    ) -> Result<AttentionOutput, NumericsError>;

    /// Number of parameters of the attention block proper.
    fn block_param_count(&self, cfg: &ModelConfig) -> usize {
        self.param_specs(cfg)
            .iter()
            .filter(|s| s.in_attention_block)
            .map(ParamSpec::numel)
            .sum()
    }
}

/// Cross attention from temporal tokens to a learned per-layer Key/Value
/// dictionary. Keys and values are split across heads by columns with no
/// projection, and there is no output projection after the head concat.
pub struct DictionaryAttention;

/// Canonical multi-head self-attention; prototypes span the T key positions.
pub struct SelfAttention;

impl Named for DictionaryAttention {
    fn name(&self) -> &'static str {
        "dictionary"
    }
}

impl Named for SelfAttention {
    fn name(&self) -> &'static str {
        "self"
    }
}

fn prototype_spec(p: usize, cols: usize) -> ParamSpec {
    ParamSpec::new(
        "prototypes",
        &[p, cols],
        Init::Uniform { lo: -0.1, hi: 0.1 },
        ParamRole::Prototypes,
    )
}

impl AttentionMechanism for DictionaryAttention {
    fn param_specs(&self, cfg: &ModelConfig) -> Vec<ParamSpec> {
        let (d, n) = (cfg.model_dim, cfg.dict_size);
        let std = 1.0 / (d as f64).sqrt();
        vec![
            ParamSpec::new("query", &[d, d], Init::XavierUniform, ParamRole::AttentionProjection)
                .attention_block(),
            ParamSpec::new("keys", &[n, d], Init::Gaussian { std }, ParamRole::Dictionary)
                .attention_block(),
            ParamSpec::new("values", &[n, d], Init::Gaussian { std }, ParamRole::Dictionary)
                .attention_block(),
            prototype_spec(cfg.prototypes, n).attention_block(),
        ]
    }

    fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        params: &[Var],
        cfg: &ModelConfig,
        metric: &dyn SimilarityMetric,
    ) -> Result<AttentionOutput, NumericsError> {
        let [w_q, keys, values, protos] = params else {
            return Err(NumericsError::Empty("dictionary attention params"));
        };
        let query = tape.matmul(x, *w_q)?;
        multi_head(tape, query, *keys, *values, *protos, cfg, metric)
    }
}

impl AttentionMechanism for SelfAttention {
    fn param_specs(&self, cfg: &ModelConfig) -> Vec<ParamSpec> {
        let d = cfg.model_dim;
        let proj = |name: &str| {
            ParamSpec::new(name, &[d, d], Init::XavierUniform, ParamRole::AttentionProjection)
                .attention_block()
        };
        vec![
            proj("query"),
            proj("key_proj"),
            proj("value_proj"),
            // Only used by the similarity criterion; not part of the block.
            prototype_spec(cfg.prototypes, cfg.window_len),
        ]
    }

    fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        params: &[Var],
        cfg: &ModelConfig,
        metric: &dyn SimilarityMetric,
    ) -> Result<AttentionOutput, NumericsError> {
        let [w_q, w_k, w_v, protos] = params else {
            return Err(NumericsError::Empty("self attention params"));
        };
        let query = tape.matmul(x, *w_q)?;
        let keys = tape.matmul(x, *w_k)?;
        let values = tape.matmul(x, *w_v)?;
        multi_head(tape, query, keys, values, *protos, cfg, metric)
    }
}

/// Shared per-head attention, similarity and fusion.
fn multi_head(
    tape: &mut Tape,
    query: Var,
    keys: Var,
    values: Var,
    prototypes: Var,
    cfg: &ModelConfig,
    metric: &dyn SimilarityMetric,
) -> Result<AttentionOutput, NumericsError> {
    let dh = cfg.head_dim();
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let protos_norm = tape.softmax(prototypes, 1)?;

    let mut heads = Vec::with_capacity(cfg.heads);
    let mut maps = Vec::with_capacity(cfg.heads);
    let mut head_similarity = Vec::with_capacity(cfg.heads);
    let mut similarity: Option<Var> = None;
    for h in 0..cfg.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let (q, k, v) = if cfg.heads == 1 {
            (query, keys, values)
        } else {
            (
                tape.slice_cols(query, lo, hi)?,
                tape.slice_cols(keys, lo, hi)?,
                tape.slice_cols(values, lo, hi)?,
            )
        };
        let kt = tape.transpose(k)?;
        let logits = tape.matmul(q, kt)?;
        let logits = tape.scale(logits, inv_sqrt);
        let map = tape.softmax(logits, 1)?;
        heads.push(tape.matmul(map, v)?);

        let s = metric.similarity(tape, map, protos_norm)?;
        let s_hat = tape.sum_axis(s, 1)?;
        similarity = Some(match similarity {
            None => s_hat,
            Some(acc) => tape.add(acc, s_hat)?,
        });
        maps.push(map);
        head_similarity.push(s);
    }
    let output = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    Ok(AttentionOutput {
        output,
        maps,
        head_similarity,
        similarity: similarity.expect("at least one head"),
    })
}
