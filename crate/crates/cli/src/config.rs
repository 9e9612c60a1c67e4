//! Run configuration: presets, JSON file, then command-line overrides.

use std::path::{Path, PathBuf};

use gdformer::data::SynthSpec;
use gdformer::experiment::{ablation_grid, SuiteSpec};
use gdformer::model::{ModelConfig, ModelError};
use gdformer::registry::detection_criteria;
use gdformer::scoring::Calibration;
use gdformer::training::{TrainConfig, TrainError};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

/// Everything a command needs. Unknown keys anywhere are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; overrides `train.seed`.
    pub seed: u64,
    /// Output directory for every artifact.
    pub out: PathBuf,
    /// Checkpoint to score (`detect`, `evaluate`) or to transfer from.
    pub checkpoint: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub scoring: ScoringConfig,
    pub ablate: AblateConfig,
    pub bench: BenchConfig,
}

/// Input series. A missing path falls back to the synthetic generator:
/// `synth` describes the labeled test series and the training series is an
/// anomaly-free draw of `train_len` points from the same family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub has_header: bool,
    pub synth: SynthSpec,
    pub train_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringConfig {
    /// Percentage of the calibration population flagged.
    pub delta: f64,
    pub calibration: Calibration,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    /// Variant ids such as `A.6`; empty runs the whole grid.
    pub variants: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub window_lens: Vec<usize>,
    pub mechanisms: Vec<String>,
    /// Timed repetitions per point, after one warm-up.
    pub reps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            checkpoint: None,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            scoring: ScoringConfig::default(),
            ablate: AblateConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            test_labels: None,
            has_header: true,
            synth: SynthSpec::default(),
            train_len: 20_000,
        }
    }
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            delta: 1.0,
            calibration: Calibration::Combined,
        }
    }
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            window_lens: vec![100, 200, 400, 800],
            mechanisms: vec!["dictionary".into(), "self".into()],
            reps: 3,
        }
    }
}

pub const PRESETS: [&str; 5] = ["msl", "smap", "swat", "psm", "synth"];

/// Per-dataset settings of the reference implementation: (λ, P, N, δ).
fn benchmark_preset(name: &str) -> Option<(f64, usize, usize, f64)> {
    Some(match name {
        "msl" => (3.0, 12, 16, 0.8),
        "smap" => (2.0, 12, 6, 0.7),
        "swat" => (2.0, 8, 8, 0.5),
        "psm" => (1.0, 10, 10, 0.6),
        _ => return None,
    })
}

/// Base configuration for a named preset at a given seed.
pub fn preset(name: &str, seed: u64) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    if let Some((lambda, p, n, delta)) = benchmark_preset(name) {
        cfg.model = ModelConfig {
            window_len: 100,
            model_dim: 512,
            layers: 3,
            heads: 8,
            dict_size: n,
            prototypes: p,
            mask_ratio: 0.05,
            ffn_dim: 2048,
            ..ModelConfig::default()
        };
        cfg.train = TrainConfig {
            lambda,
            lr: 1e-4,
            epochs: 10,
            batch_size: 64,
            ..TrainConfig::default()
        };
        cfg.scoring.delta = delta;
        return Ok(cfg);
    }
    if name == "synth" {
        let suite = SuiteSpec::synthetic(seed);
        cfg.model = suite.model.clone();
        cfg.train = suite.train.clone();
        cfg.data.train_len = suite.train_len;
        cfg.data.synth = suite.test.clone();
        cfg.scoring = ScoringConfig {
            delta: suite.delta,
            calibration: suite.calibration,
        };
        return Ok(cfg);
    }
    Err(CliError::Config(format!(
        "unknown preset {name:?} (expected one of {})",
        PRESETS.join(", ")
    )))
}

/// Overrides taken from the command line; `None` leaves the value alone.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub preset: Option<String>,
    pub delta: Option<f64>,
    pub lambda: Option<f64>,
    pub epochs: Option<usize>,
    pub calibration: Option<Calibration>,
    pub attention: Option<String>,
    pub criterion: Option<String>,
    pub metric: Option<String>,
    pub layers: Option<Vec<usize>>,
    pub checkpoint: Option<PathBuf>,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

/// Preset (if any), then the config file, then flags. The master seed is
/// settled first so a seeded preset and the file agree on it.
pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<RunConfig, CliError> {
    let file_value = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            if text.trim().is_empty() {
                Value::Object(Default::default())
            } else {
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
        }
        None => Value::Object(Default::default()),
    };
    if !file_value.is_object() {
        return Err(CliError::Config("config file must hold a JSON object".into()));
    }
    let template = serde_json::to_value(RunConfig::default()).expect("config serializes");
    check_keys(&file_value, &template, "")?;

    let seed = match flags.seed {
        Some(s) => s,
        None => match file_value.get("seed") {
            Some(v) => v
                .as_u64()
                .ok_or_else(|| CliError::Config(format!("seed: expected an unsigned integer, got {v}")))?,
            None => 0,
        },
    };
    let base = match &flags.preset {
        Some(name) => preset(name, seed)?,
        None => RunConfig {
            seed,
            ..RunConfig::default()
        },
    };
    let mut merged = serde_json::to_value(base).expect("config serializes");
    merge(&mut merged, file_value);
    let mut cfg = deserialize_sections(merged)?;

    cfg.seed = seed;
    if let Some(out) = &flags.out {
        cfg.out = out.clone();
    }
    if let Some(d) = flags.delta {
        cfg.scoring.delta = d;
    }
    if let Some(l) = flags.lambda {
        cfg.train.lambda = l;
    }
    if let Some(e) = flags.epochs {
        cfg.train.epochs = e;
    }
    if let Some(c) = flags.calibration {
        cfg.scoring.calibration = c;
    }
    if let Some(a) = &flags.attention {
        cfg.model.attention = a.clone();
    }
    if let Some(c) = &flags.criterion {
        cfg.train.criterion = c.clone();
    }
    if let Some(m) = &flags.metric {
        cfg.model.similarity = m.clone();
    }
    if let Some(l) = &flags.layers {
        cfg.model.similarity_layers = l.clone();
    }
    if let Some(p) = &flags.checkpoint {
        cfg.checkpoint = Some(p.clone());
    }
    if let Some(p) = &flags.train_data {
        cfg.data.train = Some(p.clone());
    }
    if let Some(p) = &flags.test_data {
        cfg.data.test = Some(p.clone());
    }
    if let Some(p) = &flags.test_labels {
        cfg.data.test_labels = Some(p.clone());
    }
    cfg.train.seed = cfg.seed;
    Ok(cfg)
}

/// Rejects keys the template does not have, reporting the dotted path.
fn check_keys(value: &Value, template: &Value, path: &str) -> Result<(), CliError> {
    if let (Value::Object(map), Value::Object(known)) = (value, template) {
        for (key, v) in map {
            let here = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
            match known.get(key) {
                Some(t) => check_keys(v, t, &here)?,
                None => return Err(CliError::Config(format!("unknown key {here}"))),
            }
        }
    }
    Ok(())
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Deserializes section by section so type errors carry the section name.
fn deserialize_sections(mut value: Value) -> Result<RunConfig, CliError> {
    fn take<T: serde::de::DeserializeOwned>(value: &mut Value, key: &str) -> Result<T, CliError> {
        let v = value.get_mut(key).map(Value::take).unwrap_or(Value::Null);
        serde_json::from_value(v).map_err(|e| CliError::Config(format!("{key}: {e}")))
    }
    Ok(RunConfig {
        seed: take(&mut value, "seed")?,
        out: take(&mut value, "out")?,
        checkpoint: take(&mut value, "checkpoint")?,
        data: take(&mut value, "data")?,
        model: take(&mut value, "model")?,
        train: take(&mut value, "train")?,
        scoring: take(&mut value, "scoring")?,
        ablate: take(&mut value, "ablate")?,
        bench: take(&mut value, "bench")?,
    })
}

impl RunConfig {
    /// Checks every constraint that does not depend on the data. The model's
    /// channel count is taken from the data later, so it is not checked here.
    pub fn validate(&self) -> Result<(), CliError> {
        let model = ModelConfig {
            channels: self.model.channels.max(1),
            ..self.model.clone()
        };
        model.validate().map_err(|e| match e {
            ModelError::Config { key, msg } => CliError::Config(format!("model.{key}: {msg}")),
            other => CliError::Config(format!("model: {other}")),
        })?;
        self.train.validate_allow_zero_epochs().map_err(|e| match e {
            TrainError::Config { key, msg } => CliError::Config(format!("train.{key}: {msg}")),
            other => CliError::Config(format!("train: {other}")),
        })?;
        detection_criteria()
            .resolve(&self.train.criterion)
            .map_err(|e| CliError::Config(format!("train.criterion: {e}")))?;
        if !(self.scoring.delta > 0.0 && self.scoring.delta < 100.0) {
            return Err(CliError::Config(format!(
                "scoring.delta: must lie in (0, 100), got {}",
                self.scoring.delta
            )));
        }
        if self.data.test.is_none() || self.data.train.is_none() {
            self.data
                .synth
                .validate()
                .map_err(|e| CliError::Config(format!("data.synth: {e}")))?;
        }
        let grid: Vec<&str> = ablation_grid().iter().map(|v| v.id).collect();
        if let Some(bad) = self.ablate.variants.iter().find(|v| !grid.contains(&v.as_str())) {
            return Err(CliError::Config(format!(
                "ablate.variants: unknown variant {bad:?} (expected one of {})",
                grid.join(", ")
            )));
        }
        if self.bench.window_lens.is_empty() || self.bench.mechanisms.is_empty() || self.bench.reps == 0 {
            return Err(CliError::Config(
                "bench: window_lens, mechanisms and reps must be non-empty".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psm_preset_matches_reference_settings() {
        let cfg = preset("psm", 0).unwrap();
        assert_eq!(cfg.train.lambda, 1.0);
        assert_eq!((cfg.model.prototypes, cfg.model.dict_size), (10, 10));
        assert_eq!(cfg.scoring.delta, 0.6);
        assert_eq!(cfg.model.window_len, 100);
    }

    #[test]
    fn every_preset_validates() {
        for name in PRESETS {
            preset(name, 3).unwrap().validate().unwrap();
        }
        assert!(preset("yahoo", 0).is_err());
    }

    #[test]
    fn unknown_keys_name_their_path() {
        let template = serde_json::to_value(RunConfig::default()).unwrap();
        let v: Value = serde_json::from_str(r#"{"model": {"dict_sz": 3}}"#).unwrap();
        let err = check_keys(&v, &template, "").unwrap_err();
        assert!(err.to_string().contains("model.dict_sz"), "{err}");
    }

    #[test]
    fn file_values_override_the_preset_and_flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"model": {"prototypes": 3}, "scoring": {"delta": 2.5}}"#).unwrap();
        let flags = Overrides {
            preset: Some("msl".into()),
            delta: Some(4.0),
            ..Overrides::default()
        };
        let cfg = resolve(Some(&path), &flags).unwrap();
        assert_eq!(cfg.model.prototypes, 3);
        assert_eq!(cfg.model.dict_size, 16);
        assert_eq!(cfg.scoring.delta, 4.0);
    }

    #[test]
    fn divisibility_error_names_both_values() {
        let cfg = RunConfig {
            model: ModelConfig {
                model_dim: 100,
                heads: 8,
                ..ModelConfig::default()
            },
            ..RunConfig::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("100") && msg.contains('8') && msg.contains("model"), "{msg}");
    }

    #[test]
    fn seeded_synth_preset_matches_the_suite() {
        let cfg = preset("synth", 4).unwrap();
        let suite = SuiteSpec::synthetic(4);
        assert_eq!(cfg.data.synth, suite.test);
        assert_eq!(cfg.model, suite.model);
    }
}
