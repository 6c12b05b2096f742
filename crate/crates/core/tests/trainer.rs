use caamargin::io::Document;
use caamargin::loss::Ablation;
use caamargin::synth::{augment, generate_dataset, Dataset, GeneratorParams};
use caamargin::train::{
    fit, mgda_two_task, train_step, LambdaMode, LossKind, Model, OptimizerConfig, OptimizerKind,
    TrainConfig, Trainer,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_cfg(loss: LossKind) -> TrainConfig {
    TrainConfig {
        loss,
        batch_size: 16,
        epochs: 3,
        hidden: vec![24],
        embed_dim: 8,
        seed: 11,
        ..Default::default()
    }
}

fn small_data(seed: u64) -> Dataset {
    let params = GeneratorParams {
        d_in: 10,
        ..Default::default()
    };
    generate_dataset(4, 12, &params, seed).unwrap()
}

/// Two-speaker toy batch: 3 utterances each, plus views.
fn toy_batch() -> (Array2<f64>, Array2<f64>, Vec<usize>) {
    let data = small_data(5);
    let idx = [0usize, 1, 2, 12, 13, 14];
    let x = data.features.select(ndarray::Axis(0), &idx);
    let labels = idx.iter().map(|&i| data.labels[i]).collect();
    let a = augment(&x, 0.3, 0.1, 9).unwrap();
    (x, a, labels)
}

#[test]
fn mgda_matches_grid_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let n = rng.random_range(1..20);
        let g1: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut g2: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        if case % 10 == 0 {
            // nearly parallel pairs exercise the clipped ends
            g2 = g1.iter().map(|v| 1.7 * v + 0.01).collect();
        }
        let sq = |l: f64| -> f64 {
            g1.iter()
                .zip(&g2)
                .map(|(a, b)| (l * a + (1.0 - l) * b).powi(2))
                .sum()
        };
        let (l1, l2) = mgda_two_task(&g1, &g2).unwrap();
        assert!((l1 + l2 - 1.0).abs() <= 1e-12 && (0.0..=1.0).contains(&l1));
        let best = (0..=1000).map(|k| sq(k as f64 / 1000.0)).fold(f64::INFINITY, f64::min);
        assert!(sq(l1) <= best + 1e-12, "case {case}: {} > grid {best}", sq(l1));
    }
}

#[test]
fn zero_learning_rate_is_bit_exact() {
    let (x, a, labels) = toy_batch();
    for loss in LossKind::ALL {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut cfg = small_cfg(loss);
            cfg.optimizer = OptimizerConfig {
                kind,
                lr: 0.0,
                ..Default::default()
            };
            let model = Model::init(10, 4, &cfg).unwrap();
            let (after, _) = train_step(&model, &x, &a, &labels, &cfg).unwrap();
            let (p, q) = (model.flatten(), after.flatten());
            assert!(
                p.iter().zip(&q).all(|(u, v)| u.to_bits() == v.to_bits()),
                "{loss} {kind}"
            );
        }
    }
}

#[test]
fn small_sgd_step_descends() {
    let (x, a, labels) = toy_batch();
    for loss in LossKind::ALL {
        let mut cfg = small_cfg(loss);
        cfg.lambda_mode = LambdaMode::Fixed(1.0, 1.0);
        cfg.optimizer = OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: 1e-3,
            momentum: 0.0,
            ..Default::default()
        };
        let model = Model::init(10, 4, &cfg).unwrap();
        let before = Trainer::new(model.clone(), cfg.clone())
            .unwrap()
            .evaluate(&x, &a, &labels)
            .unwrap()
            .0
            .loss;
        let (stepped, _) = train_step(&model, &x, &a, &labels, &cfg).unwrap();
        let after = Trainer::new(stepped, cfg.clone())
            .unwrap()
            .evaluate(&x, &a, &labels)
            .unwrap()
            .0
            .loss;
        assert!(after < before, "{loss}: {after} >= {before}");
    }
}

#[test]
fn classifier_rows_stay_on_the_sphere() {
    let data = small_data(3);
    for loss in [LossKind::AmSoftmax, LossKind::AamSoftmax, LossKind::CaaMarginCon] {
        let mut cfg = small_cfg(loss);
        cfg.optimizer.lr = 0.05;
        let model = Model::init(10, 4, &cfg).unwrap();
        let out = fit(model, &data, &cfg).unwrap();
        for r in out.model.classifier.weights().rows() {
            assert!((r.dot(&r).sqrt() - 1.0).abs() < 1e-12, "{loss}");
        }
    }
}

#[test]
fn fit_is_deterministic() {
    let data = small_data(4);
    for loss in LossKind::ALL {
        let cfg = small_cfg(loss);
        let a = fit(Model::init(10, 4, &cfg).unwrap(), &data, &cfg).unwrap();
        let b = fit(Model::init(10, 4, &cfg).unwrap(), &data, &cfg).unwrap();
        assert_eq!(a.history, b.history, "{loss}");
        assert_eq!(a.model, b.model, "{loss}");
        assert_eq!(a.history.len(), cfg.epochs);
    }
}

#[test]
fn zero_epochs_returns_initialization() {
    let data = small_data(4);
    let cfg = TrainConfig {
        epochs: 0,
        ..small_cfg(LossKind::CaaMarginCon)
    };
    let init = Model::init(10, 4, &cfg).unwrap();
    let out = fit(init.clone(), &data, &cfg).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.model, init);
    assert_eq!(out.initial_loss, out.final_loss);
}

#[test]
fn fixed_one_zero_equals_pure_aam_training() {
    let data = small_data(8);
    let caa = TrainConfig {
        lambda_mode: LambdaMode::Fixed(1.0, 0.0),
        ..small_cfg(LossKind::CaaMarginCon)
    };
    let aam = small_cfg(LossKind::AamSoftmax);
    let a = fit(Model::init(10, 4, &caa).unwrap(), &data, &caa).unwrap();
    let b = fit(Model::init(10, 4, &aam).unwrap(), &data, &aam).unwrap();
    let bits = |m: &Model| -> Vec<u64> {
        let mut v: Vec<u64> = m.encoder.flatten().iter().map(|x| x.to_bits()).collect();
        v.extend(m.classifier.weights().iter().map(|x| x.to_bits()));
        v
    };
    assert_eq!(bits(&a.model), bits(&b.model));
    assert_eq!(a.model.class_vectors, b.model.class_vectors);
    let la: Vec<u64> = a.history.iter().map(|r| r.mean_loss.to_bits()).collect();
    let lb: Vec<u64> = b.history.iter().map(|r| r.mean_loss.to_bits()).collect();
    assert_eq!(la, lb);
}

#[test]
fn supcon_training_descends_on_tight_speakers() {
    let params = GeneratorParams {
        d_in: 40,
        spread: 0.1,
        ..Default::default()
    };
    let data = generate_dataset(5, 20, &params, 1).unwrap();
    let cfg = TrainConfig {
        loss: LossKind::SupCon,
        epochs: 50,
        batch_size: 20,
        seed: 1,
        ..Default::default()
    };
    let out = fit(Model::init(40, 5, &cfg).unwrap(), &data, &cfg).unwrap();
    assert_eq!(out.history.len(), 50);
    assert!(
        out.final_loss < out.initial_loss,
        "{} >= {}",
        out.final_loss,
        out.initial_loss
    );
    assert!(out.history[49].mean_loss < out.history[0].mean_loss);
}

#[test]
fn mgda_bound_holds_during_training() {
    let data = small_data(6);
    for ablation in Ablation::ALL {
        let cfg = TrainConfig {
            ablation,
            epochs: 5,
            ..small_cfg(LossKind::CaaMarginCon)
        };
        let out = fit(Model::init(10, 4, &cfg).unwrap(), &data, &cfg).unwrap();
        for rec in &out.history {
            let excess = rec.max_bound_excess.unwrap();
            assert!(excess <= 1e-9, "{ablation:?} epoch {}: {excess}", rec.epoch);
            let l1 = rec.mean_lambda1.unwrap();
            assert!((0.0..=1.0).contains(&l1));
        }
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let data = small_data(2);
    let cfg = small_cfg(LossKind::CaaMarginCon);
    let out = fit(Model::init(10, 4, &cfg).unwrap(), &data, &cfg).unwrap();
    let doc = out.model.to_document(&cfg.to_key_values());
    let text = doc.to_text();
    let back = Model::from_document(&Document::parse(&text, "checkpoint").unwrap()).unwrap();
    assert_eq!(back.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        out.model.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(TrainConfig::from_text(&back_header(&text)).unwrap(), cfg);
}

fn back_header(text: &str) -> String {
    let doc = Document::parse(text, "checkpoint").unwrap();
    let mut kv = doc.header.clone();
    let keep: Vec<(String, String)> = kv
        .iter()
        .filter(|(k, _)| caamargin::train::TRAIN_KEYS.contains(k))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    kv = Default::default();
    for (k, v) in keep {
        kv.set(k, v);
    }
    kv.to_text()
}

#[test]
fn dimension_mismatch_is_reported() {
    let data = small_data(2);
    let cfg = small_cfg(LossKind::SupCon);
    let model = Model::init(12, 4, &cfg).unwrap();
    assert!(fit(model, &data, &cfg).is_err());
}
