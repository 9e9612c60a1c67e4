use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use gdformer::data::{generate_synthetic, SynthSpec, TimeSeriesDataset};
use gdformer::experiment::{
    ablation_grid, bench_attention, bench_ratio, gradcheck_config, gradcheck_model, run_ablation_on, SuiteSpec,
};
use gdformer::model::ModelConfig;
use gdformer::registry::detection_criteria;
use gdformer::scoring::{evaluate, Calibration, write_metrics_json, write_scores_csv, Evaluation};
use gdformer::training::{
    fit, load_checkpoint, save_checkpoint, transfer_fit, write_loss_log, TrainConfig, TrainError,
};

use crate::config::RunConfig;
use crate::CliError;

/// Largest relative error the gradient check accepts.
const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Files written by the current command, removed again if it fails.
pub struct Artifacts {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn open(dir: &Path) -> Result<Self, CliError> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            written: Vec::new(),
        })
    }

    /// Registers `name` inside the output directory and returns its path.
    pub fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.clone());
        p
    }

    pub fn discard(self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn echo_config(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let path = art.path("config.json");
    let json = serde_json::to_string_pretty(cfg).map_err(runtime)?;
    fs::write(&path, json + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn synth_train_spec(cfg: &RunConfig) -> SynthSpec {
    SuiteSpec {
        test: cfg.data.synth.clone(),
        train_len: cfg.data.train_len,
        ..SuiteSpec::default()
    }
    .train_spec()
}

fn load_train(cfg: &RunConfig) -> Result<TimeSeriesDataset, CliError> {
    match &cfg.data.train {
        Some(path) => TimeSeriesDataset::load_csv(path, cfg.data.has_header, None).map_err(runtime),
        None => generate_synthetic(&synth_train_spec(cfg)).map_err(runtime),
    }
}

fn load_test(cfg: &RunConfig) -> Result<TimeSeriesDataset, CliError> {
    match &cfg.data.test {
        Some(path) => {
            TimeSeriesDataset::load_csv(path, cfg.data.has_header, cfg.data.test_labels.as_deref()).map_err(runtime)
        }
        None => generate_synthetic(&cfg.data.synth).map_err(runtime),
    }
}

/// The configured model with its channel count taken from the data.
fn model_for(cfg: &RunConfig, ds: &TimeSeriesDataset) -> ModelConfig {
    ModelConfig {
        channels: ds.channels(),
        ..cfg.model.clone()
    }
}

fn require_epochs(train: &TrainConfig) -> Result<(), CliError> {
    if train.epochs == 0 {
        return Err(CliError::Config("train.epochs: must be at least 1".into()));
    }
    Ok(())
}

pub fn synth(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    echo_config(cfg, art)?;
    let train = generate_synthetic(&synth_train_spec(cfg)).map_err(runtime)?;
    let test = generate_synthetic(&cfg.data.synth).map_err(runtime)?;
    train.save_csv(&art.path("train.csv")).map_err(runtime)?;
    test.save_csv(&art.path("test.csv")).map_err(runtime)?;
    test.save_labels(&art.path("test_labels.csv")).map_err(runtime)?;
    println!(
        "wrote {} training and {} test points ({} channels)",
        train.len(),
        test.len(),
        test.channels()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    require_epochs(&cfg.train)?;
    let data = load_train(cfg)?;
    let model_cfg = model_for(cfg, &data);
    let mut resolved = cfg.clone();
    resolved.model = model_cfg.clone();
    echo_config(&resolved, art)?;
    let fitted = fit(&data, &model_cfg, &cfg.train).map_err(runtime)?;
    save_checkpoint(&art.path("model.ckpt"), &fitted.checkpoint).map_err(runtime)?;
    write_loss_log(&art.path("loss.csv"), &fitted.history).map_err(runtime)?;
    if let Some(last) = fitted.history.last() {
        println!(
            "trained {} epochs: L_c {:.4} L_s {:.4} total {:.4}",
            last.epoch, last.recon, last.sim, last.total
        );
    }
    Ok(())
}

fn score(cfg: &RunConfig) -> Result<Evaluation, CliError> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Config("checkpoint: a checkpoint path is required".into()))?;
    let ckpt = load_checkpoint(path).map_err(runtime)?;
    let model = ckpt.build_model().map_err(runtime)?;
    let test = load_test(cfg)?;
    let criterion = detection_criteria().resolve(&cfg.train.criterion).map_err(runtime)?;
    let train = match cfg.scoring.calibration {
        Calibration::Combined => Some(load_train(cfg)?),
        Calibration::Test => None,
    };
    evaluate(
        &model,
        criterion.as_ref(),
        &test,
        train.as_ref(),
        cfg.scoring.delta,
        cfg.scoring.calibration,
    )
    .map_err(runtime)
}

pub fn detect(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    echo_config(cfg, art)?;
    let eval = score(cfg)?;
    write_scores_csv(&art.path("scores.csv"), &eval).map_err(runtime)?;
    let flagged = eval.pred_raw.iter().filter(|&&p| p == 1).count();
    println!(
        "scored {} points, threshold {:.6e}, {} flagged",
        eval.pred_raw.len(),
        eval.threshold,
        flagged
    );
    Ok(())
}

pub fn evaluate_cmd(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    echo_config(cfg, art)?;
    let eval = score(cfg)?;
    let report = write_metrics_json(&art.path("metrics.json"), &eval).map_err(runtime)?;
    write_scores_csv(&art.path("scores.csv"), &eval).map_err(runtime)?;
    println!(
        "raw P {:.4} R {:.4} F1 {:.4} | adjusted P {:.4} R {:.4} F1 {:.4}",
        report.precision, report.recall, report.f1, report.precision_adj, report.recall_adj, report.f1_adj
    );
    Ok(())
}

pub fn transfer(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Config("checkpoint: a source checkpoint is required".into()))?;
    let source = load_checkpoint(path).map_err(runtime)?;
    let data = load_train(cfg)?;
    let model_cfg = model_for(cfg, &data);
    let mut resolved = cfg.clone();
    resolved.model = model_cfg.clone();
    echo_config(&resolved, art)?;
    let fitted = transfer_fit(&source, &data, &model_cfg, &cfg.train).map_err(|e| match e {
        TrainError::TransferMismatch { .. } => CliError::Config(e.to_string()),
        other => runtime(other),
    })?;
    save_checkpoint(&art.path("model.ckpt"), &fitted.checkpoint).map_err(runtime)?;
    write_loss_log(&art.path("loss.csv"), &fitted.history).map_err(runtime)?;
    println!("transferred dictionary and prototypes; trained {} epochs", fitted.history.len());
    Ok(())
}

pub fn ablate(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    require_epochs(&cfg.train)?;
    let train = load_train(cfg)?;
    let test = load_test(cfg)?;
    let base = SuiteSpec {
        test: cfg.data.synth.clone(),
        train_len: cfg.data.train_len,
        model: model_for(cfg, &test),
        train: cfg.train.clone(),
        delta: cfg.scoring.delta,
        calibration: cfg.scoring.calibration,
    };
    echo_config(cfg, art)?;
    let variants: Vec<_> = ablation_grid()
        .into_iter()
        .filter(|v| cfg.ablate.variants.is_empty() || cfg.ablate.variants.iter().any(|id| id == v.id))
        .collect();
    let rows = run_ablation_on(&base, &train, &test, &variants).map_err(runtime)?;

    let path = art.path("ablation.csv");
    let mut f = fs::File::create(&path).map_err(runtime)?;
    writeln!(f, "id,description,precision,recall,f1,precision_adj,recall_adj,f1_adj").map_err(runtime)?;
    for r in &rows {
        writeln!(
            f,
            "{},\"{}\",{},{},{},{},{},{}",
            r.id, r.description, r.precision, r.recall, r.f1, r.precision_adj, r.recall_adj, r.f1_adj
        )
        .map_err(runtime)?;
        println!("{:<4} F1 {:.4}  adjusted F1 {:.4}  {}", r.id, r.f1, r.f1_adj, r.description);
    }
    let json = serde_json::to_string_pretty(&rows).map_err(runtime)?;
    fs::write(art.path("ablation.json"), json + "\n").map_err(runtime)?;
    Ok(())
}

pub fn bench(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    echo_config(cfg, art)?;
    let mechanisms: Vec<&str> = cfg.bench.mechanisms.iter().map(String::as_str).collect();
    let rows = bench_attention(&cfg.model, &mechanisms, &cfg.bench.window_lens, cfg.bench.reps, cfg.seed)
        .map_err(runtime)?;
    let path = art.path("bench.csv");
    let mut f = fs::File::create(&path).map_err(runtime)?;
    writeln!(f, "attention,window_len,seconds").map_err(runtime)?;
    for r in &rows {
        writeln!(f, "{},{},{}", r.attention, r.window_len, r.seconds).map_err(runtime)?;
    }
    let lo = *cfg.bench.window_lens.iter().min().expect("validated non-empty");
    let hi = *cfg.bench.window_lens.iter().max().expect("validated non-empty");
    for m in &mechanisms {
        if let Some(ratio) = bench_ratio(&rows, m, lo, hi) {
            println!("{m}: time(T={hi}) / time(T={lo}) = {ratio:.2}");
        }
    }
    Ok(())
}

pub fn gradcheck(cfg: &RunConfig, art: &mut Artifacts) -> Result<(), CliError> {
    echo_config(cfg, art)?;
    let model_cfg = ModelConfig {
        attention: cfg.model.attention.clone(),
        similarity: cfg.model.similarity.clone(),
        ..gradcheck_config()
    };
    let report = gradcheck_model(&model_cfg, &cfg.train, cfg.seed, 1e-5).map_err(runtime)?;
    let json = serde_json::json!({
        "max_rel_error": report.max_rel_error,
        "tolerance": GRADCHECK_TOLERANCE,
        "per_param": report.per_param.iter().map(|(n, e)| (n.clone(), serde_json::Value::from(*e))).collect::<serde_json::Map<_, _>>(),
    });
    fs::write(art.path("gradcheck.json"), serde_json::to_string_pretty(&json).map_err(runtime)? + "\n")
        .map_err(runtime)?;
    println!("max relative error {:.3e}", report.max_rel_error);
    if report.max_rel_error >= GRADCHECK_TOLERANCE {
        return Err(CliError::Runtime(format!(
            "gradient check failed: max relative error {:.3e} >= {GRADCHECK_TOLERANCE:e}",
            report.max_rel_error
        )));
    }
    Ok(())
}
