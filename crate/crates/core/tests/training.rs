mod common;

use common::*;
use gdformer::data::{generate_synthetic, make_windows, SynthSpec, TimeSeriesDataset};
use gdformer::model::{Gdformer, ModelConfig, ParamRole};
use gdformer::numerics::{Rng, Tape, Tensor};
use gdformer::training::{
    compute_loss, fit, load_checkpoint, loss_on_tape, save_checkpoint, transfer_fit, Checkpoint, CheckpointError,
    TrainConfig, TrainError, Trainer,
};

fn small_model(channels: usize) -> ModelConfig {
    ModelConfig {
        window_len: 20,
        channels,
        model_dim: 8,
        layers: 2,
        heads: 2,
        dict_size: 4,
        prototypes: 3,
        ffn_dim: 16,
        ..ModelConfig::default()
    }
}

fn small_train(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        lambda: 1.0,
        lr: 1e-3,
        epochs,
        batch_size: 4,
        seed,
        ..TrainConfig::default()
    }
}

fn series(seed: u64, len: usize, channels: usize, rate: f64) -> TimeSeriesDataset {
    generate_synthetic(&SynthSpec {
        channels,
        len,
        anomaly_rate: rate,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn identical_seeds_give_identical_parameters() {
    let ds = series(1, 400, 3, 0.0);
    let a = fit(&ds, &small_model(3), &small_train(4, 2)).unwrap();
    let b = fit(&ds, &small_model(3), &small_train(4, 2)).unwrap();
    assert_eq!(a.checkpoint, b.checkpoint);
    let c = fit(&ds, &small_model(3), &small_train(5, 2)).unwrap();
    assert_ne!(a.model.params(), c.model.params());
}

#[test]
fn loss_decomposes_exactly() {
    let mut rng = Rng::new(3);
    for trial in 0..20 {
        let cfg = small_model(3);
        let model = Gdformer::init(cfg.clone(), trial).unwrap();
        let w = random_window(&mut rng, 20, 3);
        let out = model.forward(&w, None, false).unwrap();
        let train = TrainConfig {
            lambda: rng.uniform_range(0.0, 5.0),
            ..TrainConfig::default()
        };
        let l = compute_loss(&w, &out, &[0, 1], &train);
        assert!((l.total - (l.recon - train.lambda * l.sim)).abs() < 1e-12);
    }
}

#[test]
fn loss_matches_line_by_line_evaluation() {
    let model = Gdformer::init(tiny_config(), 31).unwrap();
    let w = random_window(&mut Rng::new(32), 4, 2);
    let (recon, sim) = oracle_single_layer(&model, &w);
    let x = to_mat(&w);
    let mut lc = 0.0;
    for t in 0..4 {
        for c in 0..2 {
            lc += (x[t][c] - recon[t][c]).powi(2);
        }
    }
    let ls: f64 = sim.iter().sum();
    let train = TrainConfig {
        lambda: 2.5,
        ..TrainConfig::default()
    };
    let out = model.forward(&w, None, false).unwrap();
    let l = compute_loss(&w, &out, &[0], &train);
    assert!((l.total - (lc - 2.5 * ls)).abs() < 1e-10);

    let only_recon = compute_loss(&w, &out, &[0], &TrainConfig { use_sim_loss: false, ..train.clone() });
    assert!((only_recon.total - lc).abs() < 1e-10);
    let only_sim = compute_loss(&w, &out, &[0], &TrainConfig { use_recon_loss: false, ..train });
    assert!((only_sim.total + 2.5 * ls).abs() < 1e-10);
}

fn grads_by_role(train: &TrainConfig) -> Vec<(String, ParamRole, f64)> {
    let cfg = ModelConfig { layers: 2, ..small_model(3) };
    let model = Gdformer::init(cfg.clone(), 8).unwrap();
    let w = random_window(&mut Rng::new(9), 20, 3);
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, true);
    let fwd = model.forward_on_tape(&mut tape, &vars, &w, None).unwrap();
    let (loss, _) = loss_on_tape(&mut tape, &w, &fwd, &cfg.similarity_layer_indices(), train).unwrap();
    let g = tape.backward(loss).unwrap();
    model
        .params()
        .specs()
        .iter()
        .zip(&vars)
        .map(|(s, &v)| {
            let norm = g.get_or_zeros(v, &s.shape).data().iter().map(|x| x.abs()).sum();
            (s.name.clone(), s.role, norm)
        })
        .collect()
}

#[test]
fn similarity_only_loss_leaves_the_head_untouched() {
    let train = TrainConfig {
        use_recon_loss: false,
        ..TrainConfig::default()
    };
    for (name, _, norm) in grads_by_role(&train) {
        if name.starts_with("head.") || name.starts_with("layers.1.") && !name.contains("attn") {
            assert_eq!(norm, 0.0, "{name}");
        }
        if name.ends_with("prototypes") {
            assert!(norm > 0.0, "{name}");
        }
    }
}

#[test]
fn reconstruction_only_loss_leaves_prototypes_untouched() {
    let train = TrainConfig {
        use_sim_loss: false,
        ..TrainConfig::default()
    };
    for (name, role, norm) in grads_by_role(&train) {
        if role == ParamRole::Prototypes {
            assert_eq!(norm, 0.0, "{name}");
        } else if name.starts_with("head.") {
            assert!(norm > 0.0, "{name}");
        }
    }
}

#[test]
fn losses_move_in_the_expected_direction() {
    let mut recon_ok = 0;
    let mut sim_ok = 0;
    for seed in 0..5 {
        let ds = series(100 + seed, 1600, 3, 0.0);
        let res = fit(&ds, &small_model(3), &small_train(seed, 5)).unwrap();
        let h = &res.history;
        if h.windows(2).all(|p| p[1].recon < p[0].recon) {
            recon_ok += 1;
        }
        if h.windows(2).all(|p| p[1].sim >= p[0].sim) {
            sim_ok += 1;
        }
    }
    assert!(recon_ok >= 4, "L_c decreased on {recon_ok}/5 seeds");
    assert!(sim_ok >= 4, "L_s grew on {sim_ok}/5 seeds");
}

#[test]
fn empty_window_set_is_an_error() {
    let ds = series(1, 10, 3, 0.0);
    assert!(matches!(
        fit(&ds, &small_model(3), &small_train(0, 1)),
        Err(TrainError::Data(_)) | Err(TrainError::NoWindows)
    ));
    let mut t = Trainer::new(Gdformer::init(small_model(3), 0).unwrap(), small_train(0, 1)).unwrap();
    assert!(matches!(t.train_epoch(&[]), Err(TrainError::NoWindows)));
}

#[test]
fn channel_mismatch_is_a_config_error() {
    let ds = series(1, 400, 4, 0.0);
    assert!(matches!(fit(&ds, &small_model(3), &small_train(0, 1)), Err(TrainError::Config { .. })));
}

fn trained_checkpoint() -> Checkpoint {
    let ds = series(2, 400, 3, 0.0);
    fit(&ds, &small_model(3), &small_train(1, 1)).unwrap().checkpoint
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let ckpt = trained_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &ckpt).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ckpt);
    for ((_, a), (_, b)) in ckpt.params.iter().zip(&back.params) {
        assert_eq!(bits(a), bits(b));
    }
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], b"GDFCKPT1");
}

#[test]
fn truncated_checkpoint_is_reported() {
    let bytes = trained_checkpoint().to_bytes().unwrap();
    for cut in [bytes.len() - 1, bytes.len() - 8 * 50, 12] {
        let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, CheckpointError::Truncated { .. }), "cut {cut}: {err:?}");
    }
}

#[test]
fn corrupt_manifest_is_reported() {
    let mut bytes = trained_checkpoint().to_bytes().unwrap();
    bytes[20] = b'#';
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::CorruptManifest(_))));
    let mut bytes = trained_checkpoint().to_bytes().unwrap();
    bytes[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::CorruptManifest(_))));
}

#[test]
fn shape_mismatch_is_reported() {
    let mut ckpt = trained_checkpoint();
    ckpt.params[0].1 = Tensor::zeros(&[2, 2]);
    let bytes = ckpt.to_bytes().unwrap();
    let err = Checkpoint::from_bytes(&bytes).and_then(|c| c.build_model().map(|_| ())).unwrap_err();
    assert!(matches!(err, CheckpointError::ShapeMismatch { .. }), "{err:?}");
}

#[test]
fn resumed_training_matches_uninterrupted_training() {
    let ds = series(6, 600, 3, 0.0);
    let windows = make_windows(&ds, 20).unwrap().windows;
    let cfg = small_model(3);
    let train = small_train(11, 4);

    let mut straight = Trainer::new(Gdformer::init(cfg.clone(), 3).unwrap(), train.clone()).unwrap();
    straight.run(&windows, |_| Ok(())).unwrap();

    let mut first = Trainer::new(Gdformer::init(cfg, 3).unwrap(), TrainConfig { epochs: 2, ..train }).unwrap();
    first.run(&windows, |_| Ok(())).unwrap();
    let bytes = first.checkpoint().to_bytes().unwrap();
    drop(first);
    let mut resumed = Trainer::resume(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    resumed.set_epochs(4);
    resumed.run(&windows, |_| Ok(())).unwrap();

    assert_eq!(resumed.checkpoint(), straight.checkpoint());
}

#[test]
fn transfer_keeps_frozen_tensors_bit_identical() {
    let source = trained_checkpoint();
    let target = series(9, 400, 5, 0.0);
    let target_cfg = small_model(5);
    let res = transfer_fit(&source, &target, &target_cfg, &small_train(2, 2)).unwrap();
    let mut frozen = 0;
    for (spec, t) in res.model.params().iter() {
        if matches!(spec.role, ParamRole::Dictionary | ParamRole::Prototypes) {
            assert_eq!(bits(t), bits(source.param(&spec.name).unwrap()), "{}", spec.name);
            frozen += 1;
        }
    }
    assert_eq!(frozen, 2 * 3);
    // Trainable parts did move.
    let init = Gdformer::init(target_cfg, gdformer::training::init_seed(2)).unwrap();
    assert_ne!(res.model.params().get("layers.0.attn.query"), init.params().get("layers.0.attn.query"));
}

#[test]
fn zero_epoch_transfer_is_initialization_plus_loaded_tensors() {
    let source = trained_checkpoint();
    let target = series(9, 400, 3, 0.0);
    let res = transfer_fit(&source, &target, &small_model(3), &small_train(2, 0)).unwrap();
    let init = Gdformer::init(small_model(3), gdformer::training::init_seed(2)).unwrap();
    for ((spec, got), (_, fresh)) in res.model.params().iter().zip(init.params().iter()) {
        let expected = if matches!(spec.role, ParamRole::Dictionary | ParamRole::Prototypes) {
            source.param(&spec.name).unwrap()
        } else {
            fresh
        };
        assert_eq!(bits(got), bits(expected), "{}", spec.name);
    }
}

#[test]
fn transfer_rejects_mismatched_shapes() {
    let source = trained_checkpoint();
    let target = series(9, 400, 3, 0.0);
    for cfg in [
        ModelConfig { dict_size: 5, ..small_model(3) },
        ModelConfig { prototypes: 2, ..small_model(3) },
        ModelConfig { model_dim: 12, ..small_model(3) },
        ModelConfig { layers: 1, ..small_model(3) },
        ModelConfig { heads: 4, ..small_model(3) },
    ] {
        assert!(matches!(
            transfer_fit(&source, &target, &cfg, &small_train(0, 1)),
            Err(TrainError::TransferMismatch { .. })
        ));
    }
}

#[test]
fn train_config_validation() {
    assert!(TrainConfig { lambda: -1.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig {
        use_recon_loss: false,
        use_sim_loss: false,
        ..TrainConfig::default()
    }
    .validate()
    .is_err());
    let json = r#"{"lambda": 2.0, "bogus": 1}"#;
    assert!(serde_json::from_str::<TrainConfig>(json).is_err());
}
