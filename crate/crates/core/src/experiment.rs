//! Reproducible experiment drivers shared by the CLI and the test suites:
//! the synthetic end-to-end run, the ablation grid and the attention bench.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{apply_mask, generate_synthetic, DataError, MaskSpec, SynthSpec, TimeSeriesDataset};
use crate::model::{Gdformer, ModelConfig, ModelError};
use crate::numerics::{derive_seed, finite_diff_check, Rng, Tape, Tensor};
use crate::registry::{attention_mechanisms, detection_criteria, similarity_metrics};
use crate::scoring::{evaluate, Calibration, Evaluation, ScoringError};
use crate::training::{fit, loss_on_tape, Checkpoint, EpochLoss, TrainConfig, TrainError};

#[derive(Debug, PartialEq, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("unknown ablation variant {0:?}")]
    UnknownVariant(String),
}

/// A train/test pair drawn from one synthetic family plus everything needed
/// to train and score on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteSpec {
    /// Test-series generator; its `family` fixes the normal pattern.
    pub test: SynthSpec,
    /// Length of the anomaly-free training series from the same family.
    pub train_len: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Percentage of points flagged.
    pub delta: f64,
    pub calibration: Calibration,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self::synthetic(0)
    }
}

impl SuiteSpec {
    /// Desk-scale benchmark: five channels, 20k test points with 5% mixed
    /// anomalies, a 64-wide two-layer model with four heads, eight
    /// dictionary entries and four prototypes, trained on 40k clean points.
    ///
    /// Similarity is the negated KL divergence and the learning rate is
    /// 1e-2. With the dot metric or the reference 1e-4 rate the ten epochs
    /// this budget allows do not separate the anomalies.
    pub fn synthetic(seed: u64) -> Self {
        let test = SynthSpec {
            channels: 5,
            len: 20_000,
            anomaly_rate: 0.05,
            seed: derive_seed(seed, 2),
            family: Some(derive_seed(seed, 1)),
            ..SynthSpec::default()
        };
        let model = ModelConfig {
            window_len: 100,
            channels: 5,
            model_dim: 64,
            layers: 2,
            heads: 4,
            dict_size: 8,
            prototypes: 4,
            ffn_dim: 256,
            similarity: "kl".into(),
            ..ModelConfig::default()
        };
        let train = TrainConfig {
            lambda: 2.0,
            lr: 1e-2,
            epochs: 10,
            batch_size: 64,
            seed,
            ..TrainConfig::default()
        };
        Self {
            test,
            train_len: 40_000,
            model,
            train,
            delta: 2.0,
            calibration: Calibration::Test,
        }
    }

    /// The anomaly-free training series: same family and channel count as
    /// the test series, independent noise.
    pub fn train_spec(&self) -> SynthSpec {
        SynthSpec {
            len: self.train_len,
            anomaly_rate: 0.0,
            seed: self.test.seed ^ 0x005e_ed0f_7a1d,
            ..self.test.clone()
        }
    }

    pub fn datasets(&self) -> Result<(TimeSeriesDataset, TimeSeriesDataset), ExperimentError> {
        Ok((generate_synthetic(&self.train_spec())?, generate_synthetic(&self.test)?))
    }
}

#[derive(Clone, Debug)]
pub struct SuiteOutcome {
    pub evaluation: Evaluation,
    pub history: Vec<EpochLoss>,
    pub model: Gdformer,
    pub checkpoint: Checkpoint,
    pub seconds: f64,
}

impl SuiteOutcome {
    pub fn f1_adjusted(&self) -> f64 {
        self.evaluation.adjusted.map_or(0.0, |m| m.f1)
    }

    pub fn f1_raw(&self) -> f64 {
        self.evaluation.raw.map_or(0.0, |m| m.f1)
    }
}

/// Scores `test` with a trained model using the spec's criterion and
/// threshold settings.
pub fn score_with_spec(
    model: &Gdformer,
    spec: &SuiteSpec,
    train: &TimeSeriesDataset,
    test: &TimeSeriesDataset,
) -> Result<Evaluation, ExperimentError> {
    let criterion = detection_criteria().resolve(&spec.train.criterion).map_err(ModelError::from)?;
    Ok(evaluate(model, criterion.as_ref(), test, Some(train), spec.delta, spec.calibration)?)
}

/// Generates the data, trains and evaluates.
pub fn run_suite(spec: &SuiteSpec) -> Result<SuiteOutcome, ExperimentError> {
    let start = Instant::now();
    let (train, test) = spec.datasets()?;
    let fitted = fit(&train, &spec.model, &spec.train)?;
    let evaluation = score_with_spec(&fitted.model, spec, &train, &test)?;
    Ok(SuiteOutcome {
        evaluation,
        history: fitted.history,
        model: fitted.model,
        checkpoint: fitted.checkpoint,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// One row of the ablation grid.
#[derive(Clone, Copy, Debug)]
pub struct AblationVariant {
    pub id: &'static str,
    pub description: &'static str,
    pub apply: fn(&mut ModelConfig, &mut TrainConfig),
}

/// Attention/loss/criterion variants A.1-A.6, similarity-layer subsets
/// B.1-B.2 and divergence metrics C.1-C.2. B.2 uses the first two layers.
/// C.0 pins the dot-product metric so a grid run on a base with another
/// metric still has the reference row.
/// Similarity-criterion variants keep the base spec's softmax scope.
pub fn ablation_grid() -> Vec<AblationVariant> {
    fn set(m: &mut ModelConfig, t: &mut TrainConfig, attention: &str, recon: bool, sim: bool, criterion: &str) {
        m.attention = attention.into();
        t.use_recon_loss = recon;
        t.use_sim_loss = sim;
        if !(criterion == "sim" && t.criterion.starts_with("sim")) {
            t.criterion = criterion.into();
        }
    }
    vec![
        AblationVariant {
            id: "A.1",
            description: "self-attention, reconstruction loss only, recon criterion",
            apply: |m, t| set(m, t, "self", true, false, "recon"),
        },
        AblationVariant {
            id: "A.2",
            description: "self-attention, joint loss, recon criterion",
            apply: |m, t| set(m, t, "self", true, true, "recon"),
        },
        AblationVariant {
            id: "A.3",
            description: "self-attention, joint loss, similarity criterion",
            apply: |m, t| set(m, t, "self", true, true, "sim"),
        },
        AblationVariant {
            id: "A.4",
            description: "dictionary attention, joint loss, recon criterion",
            apply: |m, t| set(m, t, "dictionary", true, true, "recon"),
        },
        AblationVariant {
            id: "A.5",
            description: "dictionary attention, similarity loss only, similarity criterion",
            apply: |m, t| set(m, t, "dictionary", false, true, "sim"),
        },
        AblationVariant {
            id: "A.6",
            description: "dictionary attention, joint loss, similarity criterion",
            apply: |m, t| set(m, t, "dictionary", true, true, "sim"),
        },
        AblationVariant {
            id: "B.1",
            description: "similarity from layer 1 only",
            apply: |m, _| m.similarity_layers = vec![1],
        },
        AblationVariant {
            id: "B.2",
            description: "similarity from layers 1 and 2",
            apply: |m, _| m.similarity_layers = (1..=m.layers.min(2)).collect(),
        },
        AblationVariant {
            id: "C.0",
            description: "dot-product similarity",
            apply: |m, _| m.similarity = "dot".into(),
        },
        AblationVariant {
            id: "C.1",
            description: "negated KL divergence as similarity",
            apply: |m, _| m.similarity = "kl".into(),
        },
        AblationVariant {
            id: "C.2",
            description: "negated JS divergence as similarity",
            apply: |m, _| m.similarity = "js".into(),
        },
    ]
}

pub fn ablation_variant(id: &str) -> Result<AblationVariant, ExperimentError> {
    ablation_grid()
        .into_iter()
        .find(|v| v.id == id)
        .ok_or_else(|| ExperimentError::UnknownVariant(id.to_owned()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub id: String,
    pub description: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_adj: f64,
    pub recall_adj: f64,
    pub f1_adj: f64,
}

/// Runs every variant on the suite's synthetic data with the same seed.
pub fn run_ablation(base: &SuiteSpec, variants: &[AblationVariant]) -> Result<Vec<AblationRow>, ExperimentError> {
    let (train, test) = base.datasets()?;
    run_ablation_on(base, &train, &test, variants)
}

/// Runs every variant on the given series. `base.test` and `base.train_len`
/// are ignored.
pub fn run_ablation_on(
    base: &SuiteSpec,
    train: &TimeSeriesDataset,
    test: &TimeSeriesDataset,
    variants: &[AblationVariant],
) -> Result<Vec<AblationRow>, ExperimentError> {
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let mut spec = base.clone();
        (v.apply)(&mut spec.model, &mut spec.train);
        let fitted = fit(train, &spec.model, &spec.train)?;
        let eval = score_with_spec(&fitted.model, &spec, train, test)?;
        let report = eval.report().ok_or(ScoringError::Unlabeled)?;
        rows.push(AblationRow {
            id: v.id.into(),
            description: v.description.into(),
            precision: report.precision,
            recall: report.recall,
            f1: report.f1,
            precision_adj: report.precision_adj,
            recall_adj: report.recall_adj,
            f1_adj: report.f1_adj,
        });
    }
    Ok(rows)
}

/// Wall time of one attention block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub attention: String,
    pub window_len: usize,
    /// Best of the repetitions, in seconds.
    pub seconds: f64,
}

/// Times the forward pass of a single attention block (no FFN, no norms)
/// for each mechanism and window length. Each point is the minimum over
/// `reps` runs after one warm-up.
pub fn bench_attention(
    base: &ModelConfig,
    mechanisms: &[&str],
    window_lens: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<BenchRow>, ExperimentError> {
    let metric = similarity_metrics().resolve(&base.similarity).map_err(ModelError::from)?;
    let mut rows = Vec::new();
    for &name in mechanisms {
        let mech = attention_mechanisms().resolve(name).map_err(ModelError::from)?;
        for &t in window_lens {
            let cfg = ModelConfig {
                window_len: t,
                attention: name.into(),
                ..base.clone()
            };
            cfg.validate()?;
            let mut rng = Rng::new(seed);
            let params: Vec<Tensor> = mech.param_specs(&cfg).iter().map(|s| s.initialize(&mut rng)).collect();
            let x = Tensor::new(
                vec![t, cfg.model_dim],
                (0..t * cfg.model_dim).map(|_| rng.gaussian()).collect(),
            )
            .map_err(ModelError::from)?;
            let mut best = f64::INFINITY;
            for rep in 0..=reps {
                let start = Instant::now();
                let mut tape = Tape::new();
                let xv = tape.constant(x.clone());
                let pv: Vec<_> = params.iter().map(|p| tape.constant(p.clone())).collect();
                let out = mech
                    .forward(&mut tape, xv, &pv, &cfg, metric.as_ref())
                    .map_err(ModelError::from)?;
                std::hint::black_box(tape.value(out.similarity));
                let elapsed = start.elapsed().as_secs_f64();
                if rep > 0 {
                    best = best.min(elapsed);
                }
            }
            rows.push(BenchRow {
                attention: name.into(),
                window_len: t,
                seconds: best,
            });
        }
    }
    Ok(rows)
}

/// `seconds(T = hi) / seconds(T = lo)` for one mechanism.
pub fn bench_ratio(rows: &[BenchRow], attention: &str, lo: usize, hi: usize) -> Option<f64> {
    let at = |t: usize| {
        rows.iter()
            .find(|r| r.attention == attention && r.window_len == t)
            .map(|r| r.seconds)
    };
    Some(at(hi)? / at(lo)?)
}

/// The smallest configuration the full-model gradient check runs on.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        window_len: 4,
        channels: 2,
        model_dim: 8,
        layers: 1,
        heads: 1,
        dict_size: 3,
        prototypes: 2,
        ffn_dim: 32,
        ..ModelConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelGradCheck {
    /// Worst relative error per parameter tensor, in parameter order.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
}

/// Central-difference check of the whole training objective (masked
/// forward, reconstruction and similarity terms) against backprop, on one
/// random window.
pub fn gradcheck_model(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    h: f64,
) -> Result<ModelGradCheck, ExperimentError> {
    let model = Gdformer::init(model_cfg.clone(), derive_seed(seed, 0))?;
    let mut rng = Rng::new(derive_seed(seed, 3));
    let (t, d) = (model_cfg.window_len, model_cfg.channels);
    let window = Tensor::new(vec![t, d], (0..t * d).map(|_| rng.uniform_range(-2.0, 2.0)).collect())
        .map_err(ModelError::from)?;
    let (_, mask) = apply_mask(
        &window,
        MaskSpec {
            ratio: model_cfg.mask_ratio,
            seed: rng.next_u64(),
        },
    )?;
    let layers = model_cfg.similarity_layer_indices();
    let report = finite_diff_check(
        |tape, vars| {
            let fwd = model
                .forward_on_tape(tape, vars, &window, Some(&mask))
                .map_err(|e| match e {
                    ModelError::Numerics(n) => n,
                    other => unreachable!("window is built from the config: {other}"),
                })?;
            Ok(loss_on_tape(tape, &window, &fwd, &layers, train_cfg)?.0)
        },
        model.params().tensors(),
        h,
    )
    .map_err(ModelError::from)?;
    let per_param = model
        .params()
        .specs()
        .iter()
        .zip(&report.per_param)
        .map(|(s, &e)| (s.name.clone(), e))
        .collect();
    Ok(ModelGradCheck {
        per_param,
        max_rel_error: report.max_rel_error,
    })
}
