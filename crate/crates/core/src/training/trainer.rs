use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{apply_mask, make_windows, MaskSpec, TimeSeriesDataset};
use crate::model::{Gdformer, ModelConfig, ParamRole};
use crate::numerics::{derive_seed, AdamConfig, AdamState, Rng, Tape, Tensor};

use super::{loss_on_tape, Checkpoint, LossComponents, TrainConfig, TrainError};

/// Sub-seed streams derived from the training seed.
const INIT_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;

/// Epoch means of the loss components over all windows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// 1-based.
    pub epoch: usize,
    pub recon: f64,
    pub sim: f64,
    pub total: f64,
}

/// Seed used for parameter initialization under training seed `seed`.
pub fn init_seed(seed: u64) -> u64 {
    derive_seed(seed, INIT_STREAM)
}

/// True for parameters that transfer keeps fixed.
pub fn is_transferred(role: ParamRole) -> bool {
    matches!(role, ParamRole::Dictionary | ParamRole::Prototypes)
}

/// Mini-batch Adam over shuffled windows with a fresh mask per window.
///
/// Each epoch shuffles window indices with Fisher-Yates from the trainer's
/// generator, then for every window draws one mask seed from the same
/// generator. Batch gradients are the mean of per-window gradients.
#[derive(Clone, Debug)]
pub struct Trainer {
    model: Gdformer,
    config: TrainConfig,
    optimizer: AdamState,
    rng: Rng,
    epoch: usize,
    history: Vec<EpochLoss>,
    trainable: Vec<bool>,
}

impl Trainer {
    pub fn new(model: Gdformer, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate_allow_zero_epochs()?;
        let optimizer = AdamState::new(
            AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            },
            model.params().tensors(),
        );
        let rng = Rng::new(derive_seed(config.seed, TRAIN_STREAM));
        Ok(Self::assemble(model, config, optimizer, rng, 0, Vec::new()))
    }

    fn assemble(
        model: Gdformer,
        config: TrainConfig,
        optimizer: AdamState,
        rng: Rng,
        epoch: usize,
        history: Vec<EpochLoss>,
    ) -> Self {
        let trainable = model
            .params()
            .specs()
            .iter()
            .map(|s| !(config.transfer_freeze && is_transferred(s.role)))
            .collect();
        Self {
            model,
            config,
            optimizer,
            rng,
            epoch,
            history,
            trainable,
        }
    }

    /// Restores the exact training state captured by [`Self::checkpoint`].
    pub fn resume(ckpt: Checkpoint) -> Result<Self, TrainError> {
        let model = ckpt.build_model()?;
        let optimizer = match ckpt.optimizer {
            Some(o) => o,
            None => AdamState::new(
                AdamConfig {
                    lr: ckpt.train.lr,
                    ..AdamConfig::default()
                },
                model.params().tensors(),
            ),
        };
        let rng = ckpt
            .rng
            .unwrap_or_else(|| Rng::new(derive_seed(ckpt.train.seed, TRAIN_STREAM)));
        Ok(Self::assemble(model, ckpt.train, optimizer, rng, ckpt.epoch, ckpt.history))
    }

    pub fn model(&self) -> &Gdformer {
        &self.model
    }

    pub fn into_model(self) -> Gdformer {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochLoss] {
        &self.history
    }

    pub fn trainable(&self) -> &[bool] {
        &self.trainable
    }

    /// Changes the target epoch count, e.g. to continue a resumed run.
    pub fn set_epochs(&mut self, epochs: usize) {
        self.config.epochs = epochs;
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.config().clone(),
            train: self.config.clone(),
            epoch: self.epoch,
            params: self
                .model
                .params()
                .iter()
                .map(|(s, t)| (s.name.clone(), t.clone()))
                .collect(),
            optimizer: Some(self.optimizer.clone()),
            rng: Some(self.rng.clone()),
            history: self.history.clone(),
        }
    }

    /// One pass over `windows`.
    pub fn train_epoch(&mut self, windows: &[Tensor]) -> Result<EpochLoss, TrainError> {
        if windows.is_empty() {
            return Err(TrainError::NoWindows);
        }
        let mcfg = self.model.config().clone();
        let layers = mcfg.similarity_layer_indices();
        let mut order: Vec<usize> = (0..windows.len()).collect();
        self.rng.shuffle(&mut order);

        let mut sums = LossComponents::default();
        for batch in order.chunks(self.config.batch_size) {
            let inv = 1.0 / batch.len() as f64;
            let mut grads: Vec<Tensor> = self
                .model
                .params()
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect();
            for &i in batch {
                let window = &windows[i];
                let spec = MaskSpec {
                    ratio: mcfg.mask_ratio,
                    seed: self.rng.next_u64(),
                };
                let (_, mask) = apply_mask(window, spec)?;

                let mut tape = Tape::new();
                let vars: Vec<_> = self
                    .model
                    .params()
                    .tensors()
                    .iter()
                    .zip(&self.trainable)
                    .map(|(t, &train)| if train { tape.param(t.clone()) } else { tape.constant(t.clone()) })
                    .collect();
                let fwd = self.model.forward_on_tape(&mut tape, &vars, window, Some(&mask))?;
                let (loss, parts) = loss_on_tape(&mut tape, window, &fwd, &layers, &self.config)?;
                let g = tape.backward(loss)?;
                for (acc, &v) in grads.iter_mut().zip(&vars) {
                    if let Some(gv) = g.get(v) {
                        for (a, b) in acc.data_mut().iter_mut().zip(gv.data()) {
                            *a += inv * b;
                        }
                    }
                }
                sums.recon += parts.recon;
                sums.sim += parts.sim;
                sums.total += parts.total;
            }
            if let Some(clip) = self.config.grad_clip {
                clip_global_norm(&mut grads, clip);
            }
            self.optimizer
                .step(self.model.params_mut().tensors_mut(), &grads, Some(&self.trainable))?;
        }

        self.epoch += 1;
        let n = windows.len() as f64;
        let record = EpochLoss {
            epoch: self.epoch,
            recon: sums.recon / n,
            sim: sums.sim / n,
            total: sums.total / n,
        };
        self.history.push(record);
        Ok(record)
    }

    /// Trains until `config.epochs` epochs are complete, calling `after_epoch`
    /// after each one.
    pub fn run<F>(&mut self, windows: &[Tensor], mut after_epoch: F) -> Result<(), TrainError>
    where
        F: FnMut(&Trainer) -> Result<(), TrainError>,
    {
        while self.epoch < self.config.epochs {
            self.train_epoch(windows)?;
            after_epoch(self)?;
        }
        Ok(())
    }
}

fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub model: Gdformer,
    pub history: Vec<EpochLoss>,
    pub checkpoint: Checkpoint,
}

fn check_channels(cfg: &ModelConfig, ds: &TimeSeriesDataset) -> Result<(), TrainError> {
    if cfg.channels != ds.channels() {
        return Err(TrainError::Config {
            key: "channels".into(),
            msg: format!("model expects {} channels, dataset has {}", cfg.channels, ds.channels()),
        });
    }
    Ok(())
}

/// Trains a freshly initialized model on the non-overlapping windows of `ds`.
pub fn fit(ds: &TimeSeriesDataset, model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<FitResult, TrainError> {
    train_cfg.validate()?;
    check_channels(model_cfg, ds)?;
    let model = Gdformer::init(model_cfg.clone(), init_seed(train_cfg.seed))?;
    let windows = make_windows(ds, model_cfg.window_len)?;
    let mut trainer = Trainer::new(model, train_cfg.clone())?;
    trainer.run(&windows.windows, |_| Ok(()))?;
    Ok(finish(trainer))
}

fn finish(trainer: Trainer) -> FitResult {
    let checkpoint = trainer.checkpoint();
    let history = trainer.history().to_vec();
    FitResult {
        model: trainer.into_model(),
        history,
        checkpoint,
    }
}

/// Trains on `target` with dictionary and prototype tensors loaded from
/// `source` and frozen. Every other parameter is initialized fresh, so the
/// target may have a different channel count. Frozen tensors are compared
/// bit-for-bit against the source after every epoch.
pub fn transfer_fit(
    source: &Checkpoint,
    target: &TimeSeriesDataset,
    target_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<FitResult, TrainError> {
    let train_cfg = TrainConfig {
        transfer_freeze: true,
        ..train_cfg.clone()
    };
    train_cfg.validate_allow_zero_epochs()?;
    check_channels(target_cfg, target)?;
    let src = &source.model;
    for (key, s, t) in [
        ("model_dim", src.model_dim, target_cfg.model_dim),
        ("layers", src.layers, target_cfg.layers),
        ("heads", src.heads, target_cfg.heads),
        ("dict_size", src.dict_size, target_cfg.dict_size),
        ("prototypes", src.prototypes, target_cfg.prototypes),
    ] {
        if s != t {
            return Err(TrainError::TransferMismatch { key, source_value: s, target_value: t });
        }
    }
    if src.attention != target_cfg.attention {
        return Err(TrainError::Config {
            key: "attention".into(),
            msg: format!("source uses {:?}, target {:?}", src.attention, target_cfg.attention),
        });
    }
    if src.attention == "self" && src.window_len != target_cfg.window_len {
        return Err(TrainError::TransferMismatch {
            key: "window_len",
            source_value: src.window_len,
            target_value: target_cfg.window_len,
        });
    }

    let mut model = Gdformer::init(target_cfg.clone(), init_seed(train_cfg.seed))?;
    let mut frozen = Vec::new();
    let names: Vec<(usize, String)> = model
        .params()
        .specs()
        .iter()
        .enumerate()
        .filter(|(_, s)| is_transferred(s.role))
        .map(|(i, s)| (i, s.name.clone()))
        .collect();
    for (i, name) in names {
        let tensor = source
            .param(&name)
            .ok_or_else(|| TrainError::Config {
                key: "source".into(),
                msg: format!("source checkpoint lacks {name}"),
            })?
            .clone();
        let slot = &mut model.params_mut().tensors_mut()[i];
        if slot.shape() != tensor.shape() {
            return Err(TrainError::Config {
                key: "source".into(),
                msg: format!("{name}: shape {:?} vs {:?}", tensor.shape(), slot.shape()),
            });
        }
        *slot = tensor.clone();
        frozen.push((i, name, tensor));
    }

    let windows = make_windows(target, target_cfg.window_len)?;
    let mut trainer = Trainer::new(model, train_cfg)?;
    trainer.run(&windows.windows, |t| {
        let tensors = t.model().params().tensors();
        for (i, name, original) in &frozen {
            let now = &tensors[*i];
            let same = now
                .data()
                .iter()
                .zip(original.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Err(TrainError::FrozenChanged(name.clone()));
            }
        }
        Ok(())
    })?;
    Ok(finish(trainer))
}

/// `epoch,L_c,L_s,total`
pub fn write_loss_log(path: &Path, history: &[EpochLoss]) -> Result<(), TrainError> {
    let io = |e: std::io::Error| TrainError::Io(format!("{}: {e}", path.display()));
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "epoch,L_c,L_s,total").map_err(io)?;
    for h in history {
        writeln!(f, "{},{:?},{:?},{:?}", h.epoch, h.recon, h.sim, h.total).map_err(io)?;
    }
    f.flush().map_err(io)
}
