use gdformer::data::{make_detection_windows, TimeSeriesDataset};
use gdformer::numerics::{Rng, Tensor};
use gdformer::scoring::{
    anomaly_score, assemble_series_scores, evaluate, flag, point_adjust, precision_recall_f1, threshold_from_quantile,
    write_metrics_json, write_scores_csv, Calibration, ScoringError,
};
use gdformer::model::{Gdformer, ModelConfig};
use gdformer::registry::detection_criteria;
use proptest::prelude::*;

/// Counts the confusion matrix by brute force.
fn confusion(pred: &[u8], truth: &[u8]) -> (usize, usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for i in 0..pred.len() {
        match (pred[i], truth[i]) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    (tp, fp, fn_)
}

#[test]
fn metrics_agree_with_counting_oracle() {
    let mut rng = Rng::new(2024);
    for _ in 0..100 {
        let n = 1 + rng.below(200) as usize;
        let p_pos = rng.uniform();
        let pred: Vec<u8> = (0..n).map(|_| rng.bernoulli(p_pos) as u8).collect();
        let truth: Vec<u8> = (0..n).map(|_| rng.bernoulli(0.3) as u8).collect();
        let (tp, fp, fn_) = confusion(&pred, &truth);
        let m = precision_recall_f1(&pred, &truth).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (tp, fp, fn_));
        let p = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let r = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        assert!((m.precision - p).abs() < 1e-15 && (m.recall - r).abs() < 1e-15 && (m.f1 - f).abs() < 1e-15);
    }
}

#[test]
fn hand_counted_metrics() {
    let m = precision_recall_f1(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap();
    assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
    let m = precision_recall_f1(&[0, 1, 1], &[0, 1, 1]).unwrap();
    assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    assert!(matches!(
        precision_recall_f1(&[0, 1], &[0]),
        Err(ScoringError::LengthMismatch { .. })
    ));
}

#[test]
fn threshold_counts_match_sort_oracle() {
    let mut rng = Rng::new(5);
    for _ in 0..20 {
        // Rounded values so ties actually occur.
        let scores: Vec<f64> = (0..1000).map(|_| (rng.uniform() * 200.0).round()).collect();
        let th = threshold_from_quantile(&scores, 5.0).unwrap();
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(th, sorted[49]);
        let flagged = flag(&scores, th).iter().filter(|&&f| f == 1).count();
        let ties = scores.iter().filter(|&&s| s == th).count();
        assert!(flagged >= 50 && flagged <= 50 + ties, "{flagged}");
    }
}

#[test]
fn everything_flagged_in_the_limit() {
    let mut rng = Rng::new(6);
    let scores: Vec<f64> = (0..300).map(|_| rng.uniform()).collect();
    let truth: Vec<u8> = (0..300).map(|i| (i % 10 == 0) as u8).collect();
    let th = threshold_from_quantile(&scores, 100.0 - 1e-9).unwrap();
    let pred = flag(&scores, th);
    let m = precision_recall_f1(&point_adjust(&pred, &truth).unwrap(), &truth).unwrap();
    assert_eq!(m.recall, 1.0);
    assert!((m.precision - 0.1).abs() < 1e-12);
}

#[test]
fn tail_window_overlap_keeps_earlier_scores() {
    let ds = TimeSeriesDataset::new(Tensor::zeros(&[150, 1]), None).unwrap();
    let windows = make_detection_windows(&ds, 100).unwrap();
    assert_eq!(windows.offsets, vec![0, 50]);
    let per_window = vec![vec![1.0; 100], vec![2.0; 100]];
    let s = assemble_series_scores(&per_window, &windows).unwrap();
    assert_eq!(s.scores.len(), 150);
    assert!(s.scores[..100].iter().all(|&v| v == 1.0));
    assert!(s.scores[100..].iter().all(|&v| v == 2.0));
}

fn toy_model() -> Gdformer {
    Gdformer::init(
        ModelConfig {
            window_len: 10,
            channels: 2,
            model_dim: 8,
            layers: 2,
            heads: 2,
            dict_size: 4,
            prototypes: 3,
            ffn_dim: 8,
            ..ModelConfig::default()
        },
        7,
    )
    .unwrap()
}

fn toy_series(len: usize, seed: u64, labeled: bool) -> TimeSeriesDataset {
    let mut rng = Rng::new(seed);
    let values = Tensor::matrix(len, 2, (0..2 * len).map(|_| rng.gaussian()).collect()).unwrap();
    let labels = labeled.then(|| (0..len).map(|i| (i % 17 < 2) as u8).collect());
    TimeSeriesDataset::new(values, labels).unwrap()
}

#[test]
fn evaluation_is_deterministic_and_writes_artifacts() {
    let model = toy_model();
    let test = toy_series(47, 1, true);
    let train = toy_series(60, 2, false);
    let crit = detection_criteria().resolve("sim").unwrap();
    let a = evaluate(&model, crit.as_ref(), &test, Some(&train), 10.0, Calibration::Combined).unwrap();
    let b = evaluate(&model, crit.as_ref(), &test, Some(&train), 10.0, Calibration::Combined).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.scores.scores.len(), 47);
    let report = a.report().unwrap();
    assert!(report.f1_adj >= report.f1);

    let dir = tempfile::tempdir().unwrap();
    write_scores_csv(&dir.path().join("scores.csv"), &a).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "index,score,pred_raw,pred_adjusted,truth");
    assert_eq!(csv.lines().count(), 48);
    write_metrics_json(&dir.path().join("metrics.json"), &a).unwrap();
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    for key in ["precision", "recall", "f1", "precision_adj", "recall_adj", "f1_adj", "threshold", "delta"] {
        assert!(json.get(key).is_some(), "{key}");
    }
}

#[test]
fn metrics_require_labels() {
    let model = toy_model();
    let test = toy_series(30, 1, false);
    let crit = detection_criteria().resolve("recon").unwrap();
    let eval = evaluate(&model, crit.as_ref(), &test, None, 5.0, Calibration::Test).unwrap();
    assert!(eval.report().is_none());
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        write_metrics_json(&dir.path().join("m.json"), &eval),
        Err(ScoringError::Unlabeled)
    ));
}

#[test]
fn series_scope_scores_sum_to_one_over_the_series() {
    let model = toy_model();
    let test = toy_series(43, 3, true);
    let crit = detection_criteria().resolve("sim-series").unwrap();
    let eval = evaluate(&model, crit.as_ref(), &test, None, 5.0, Calibration::Test).unwrap();
    assert!((eval.scores.scores.iter().sum::<f64>() - 1.0).abs() < 1e-10);
}

fn labels(len: usize) -> impl Strategy<Value = Vec<u8>> {
    proptest::collection::vec(prop_oneof![3 => Just(0u8), 1 => Just(1u8)], len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn window_scores_sum_to_one(totals in proptest::collection::vec(-50.0f64..50.0, 1..200)) {
        let s = anomaly_score(&totals);
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(s.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn adjusted_f1_never_below_raw((pred, truth) in (1usize..150).prop_flat_map(|n| (labels(n), labels(n)))) {
        let adj = point_adjust(&pred, &truth).unwrap();
        let raw = precision_recall_f1(&pred, &truth).unwrap();
        let adjusted = precision_recall_f1(&adj, &truth).unwrap();
        prop_assert!(adjusted.f1 >= raw.f1);
        // Outside true segments nothing changes.
        for i in 0..pred.len() {
            if truth[i] == 0 {
                prop_assert_eq!(adj[i], pred[i]);
            }
        }
    }

    #[test]
    fn larger_delta_never_unflags(
        scores in proptest::collection::vec(0.0f64..1.0, 1..300),
        d1 in 0.01f64..99.0,
        extra in 0.0f64..50.0,
    ) {
        let d2 = (d1 + extra).min(99.99);
        let a = flag(&scores, threshold_from_quantile(&scores, d1).unwrap());
        let b = flag(&scores, threshold_from_quantile(&scores, d2).unwrap());
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x <= y));
    }

    #[test]
    fn assembled_length_matches_series(len in 10usize..400, t in 2usize..40) {
        prop_assume!(len >= t);
        let ds = TimeSeriesDataset::new(Tensor::zeros(&[len, 1]), None).unwrap();
        let w = make_detection_windows(&ds, t).unwrap();
        let per: Vec<Vec<f64>> = w.offsets.iter().map(|&o| (o..o + t).map(|i| i as f64).collect()).collect();
        let s = assemble_series_scores(&per, &w).unwrap();
        prop_assert_eq!(s.scores, (0..len).map(|i| i as f64).collect::<Vec<_>>());
    }
}
