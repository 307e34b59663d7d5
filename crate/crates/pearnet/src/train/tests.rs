use proptest::prelude::*;

use super::*;
use crate::signal::{synthesize, SynthConfig};

fn tiny_data(n_per_class: usize, seed: u64) -> Dataset {
    let cfg = SynthConfig { epoch_len: 40, sample_rate: 40.0, n_per_class, noise_sigma: 0.2, ..SynthConfig::default() };
    synthesize(&cfg, seed).unwrap().z_normalized(1e-8)
}

/// Independent step-by-step reference for the optimizer on `f(θ) = (θ - 3)²`.
fn reference_trace(cfg: &AdamWConfig, theta0: f64, steps: usize) -> Vec<f64> {
    let (mut theta, mut m, mut v, mut vhat_max) = (theta0, 0.0, 0.0, 0.0f64);
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = 2.0 * (theta - 3.0);
        theta *= 1.0 - cfg.lr * cfg.weight_decay;
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
        let m_hat = m / (1.0 - cfg.beta1.powi(t as i32));
        let v_used = if cfg.amsgrad {
            vhat_max = vhat_max.max(v);
            vhat_max
        } else {
            v
        };
        let v_hat = v_used / (1.0 - cfg.beta2.powi(t as i32));
        theta -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        out.push(theta);
    }
    out
}

fn run_optimizer(cfg: &AdamWConfig, theta0: f64, steps: usize) -> Vec<f64> {
    let mut params = vec![crate::diff::Tensor::vector(vec![theta0])];
    let mut opt = AdamW::new(cfg.clone(), &params);
    let mut out = Vec::new();
    for _ in 0..steps {
        let g = 2.0 * (params[0].data()[0] - 3.0);
        opt.step(&mut params, &[crate::diff::Tensor::vector(vec![g])]).unwrap();
        out.push(params[0].data()[0]);
    }
    out
}

#[test]
fn optimizer_with_plain_second_moment_matches_reference() {
    let cfg = AdamWConfig { lr: 0.1, weight_decay: 0.0, amsgrad: false, ..AdamWConfig::default() };
    let (got, want) = (run_optimizer(&cfg, -1.0, 10), reference_trace(&cfg, -1.0, 10));
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let model_cfg = crate::model::ModelConfig::tiny();
    let mut model = PearNetModel::new(model_cfg, 1).unwrap();
    let before = model.store.clone();
    let data = tiny_data(2, 0);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        optimizer: AdamWConfig { lr: 0.0, weight_decay: 0.0, ..AdamWConfig::default() },
        ..TrainConfig::default()
    };
    let idx: Vec<usize> = (0..data.len()).collect();
    fit(&mut model, &data, &idx, &cfg, &[1.0; 5], 3).unwrap();
    assert_eq!(model.store, before);
}

#[test]
fn kfold_examples() {
    let labels: Vec<u8> = (0..100).map(|i| (i % 5) as u8).collect();
    let folds = kfold_split(&labels, 20, 1).unwrap();
    assert!(folds.iter().all(|f| f.test.len() == 5 && f.train.len() == 95));

    let balanced: Vec<u8> = (0..50).map(|i| (i / 10) as u8).collect();
    for f in kfold_split(&balanced, 5, 7).unwrap() {
        let mut counts = [0; 5];
        for &i in &f.test {
            counts[balanced[i] as usize] += 1;
        }
        assert_eq!(counts, [2; 5]);
    }
    assert!(kfold_split(&balanced, 51, 0).is_err());
    assert!(kfold_split(&balanced, 1, 0).is_err());
    assert_eq!(kfold_split(&balanced, 5, 3).unwrap(), kfold_split(&balanced, 5, 3).unwrap());
}

proptest! {
    #[test]
    fn kfold_is_a_balanced_partition(labels in prop::collection::vec(0u8..5, 2..80), k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(k <= labels.len());
        let folds = kfold_split(&labels, k, seed).unwrap();
        let mut seen = vec![0; labels.len()];
        for f in &folds {
            for &i in &f.test {
                seen[i] += 1;
            }
            prop_assert_eq!(f.test.len() + f.train.len(), labels.len());
            prop_assert!(f.train.iter().all(|i| !f.test.contains(i)));
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}

#[test]
fn metric_examples() {
    let truth = [0u8, 1, 2, 3, 4, 0];
    let m = Metrics::from_predictions(&truth, &truth).unwrap();
    assert_eq!((m.accuracy, m.macro_f1), (1.0, 1.0));

    let mut c = [[0u64; 5]; 5];
    c[0][0] = 2;
    c[0][1] = 1;
    c[1][0] = 1;
    c[1][1] = 2;
    let m = Metrics::from_confusion(c).unwrap();
    // P = R = 2/3 for both present classes
    assert!((m.per_class_f1[0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((m.per_class_f1[1] - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(m.per_class_f1[2..], [0.0; 3]);
    assert_eq!(m.macro_f1, m.per_class_f1.iter().sum::<f64>() / 5.0);

    let truth: Vec<u8> = (0..50).map(|i| (i / 10) as u8).collect();
    let m = Metrics::from_predictions(&truth, &[2; 50]).unwrap();
    assert!((m.per_class_f1[2] - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(m.per_class_f1.iter().filter(|&&f| f == 0.0).count(), 4);
    assert!((m.accuracy - 0.2).abs() < 1e-15);
    assert!(Metrics::from_confusion([[0; 5]; 5]).is_err());
}

#[test]
fn pooled_report_sums_confusions() {
    let a = Metrics::from_predictions(&[0, 1, 2], &[0, 1, 1]).unwrap();
    let b = Metrics::from_predictions(&[3, 4], &[3, 3]).unwrap();
    let r = MetricsReport::pool(vec![a, b]).unwrap();
    assert_eq!(r.pooled.total, 5);
    assert!((r.pooled.accuracy - 0.6).abs() < 1e-15);
    let table = r.to_table();
    assert!(table.lines().next().unwrap().contains("Accuracy"));
    assert!(table.contains("REM") && table.contains("pooled"));
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn overfits_a_small_batch() {
    let data = tiny_data(4, 5);
    let mut model =
        PearNetModel::new(crate::model::ModelConfig { dropout_p: 0.0, ..crate::model::ModelConfig::tiny() }, 2)
            .unwrap();
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 20,
        optimizer: AdamWConfig { lr: 1e-2, ..AdamWConfig::default() },
        ..TrainConfig::default()
    };
    let idx: Vec<usize> = (0..20).collect();
    let trace = fit(&mut model, &data, &idx, &cfg, &[1.0; 5], 9).unwrap();
    assert_eq!(trace.len(), 50);
    let (first, last) = (trace[0].loss.total, trace[49].loss.total);
    assert!(last < 0.9 * first, "{first} -> {last}");
}

#[test]
fn divergence_names_the_step() {
    let data = tiny_data(1, 0);
    let mut model = PearNetModel::new(crate::model::ModelConfig::tiny(), 2).unwrap();
    model.store.values_mut()[0].data_mut()[0] = f64::NAN;
    let idx: Vec<usize> = (0..5).collect();
    let cfg = TrainConfig { epochs: 1, batch_size: 5, ..TrainConfig::default() };
    match fit(&mut model, &data, &idx, &cfg, &[1.0; 5], 0) {
        Err(Error::Diverged { step, .. }) => assert_eq!(step, 0),
        other => panic!("{other:?}"),
    }
}

#[test]
fn cross_validation_is_reproducible() {
    let data = tiny_data(2, 1);
    let cfg = TrainConfig { epochs: 2, batch_size: 4, k_folds: 2, seed: 4, ..TrainConfig::default() };
    let run = || cross_validate(&data, &crate::model::ModelConfig::tiny(), &cfg, |_, _| {}).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.report.folds.len(), 2);
    assert_eq!(a.report.pooled.total, 10);
    assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());
    assert_eq!(a.traces, b.traces);
    assert!(evaluate(&a.first_model, &data, &[]).is_err());
}
