mod common;

use caamargin::loss::*;
use common::*;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn table_for(seed: u64, speakers: usize, d: usize) -> ClassVectorTable<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31) + 7);
    ClassVectorTable::dense(gaussian(&mut rng, speakers, d) * 1.5)
}

fn max_angle_plus(batch: &EmbeddingBatch<f64>, m: f64) -> f64 {
    let z = batch.data();
    let l = batch.labels();
    let mut worst = 0.0f64;
    for i in 0..batch.len() {
        for j in 0..batch.len() {
            if i != j && l[i] == l[j] {
                worst = worst.max(z.row(i).dot(&z.row(j)).clamp(-1.0, 1.0).acos() + m);
            }
        }
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn margin_loss_is_nondecreasing_in_margin(seed in 0u64..10_000, n in prop::sample::select(vec![4usize, 8]), d in prop::sample::select(vec![4usize, 8, 16])) {
        let (batch, _) = random_batch(seed, n, d);
        let margins = [0.0, 0.1, 0.2, 0.3];
        prop_assume!(max_angle_plus(&batch, 0.3) < std::f64::consts::PI);
        let values: Vec<f64> = margins
            .iter()
            .map(|&m| sup_margin_con_loss(&batch, &MarginConfig { margin: m, ..Default::default() }).unwrap().value)
            .collect();
        for w in values.windows(2) {
            prop_assert!(w[1] >= w[0], "{values:?}");
        }
    }

    #[test]
    fn permuting_rows_permutes_gradients(seed in 0u64..10_000, n in prop::sample::select(vec![4usize, 8]), d in prop::sample::select(vec![4usize, 8])) {
        let (batch, speakers) = random_batch(seed, n, d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..batch.len()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let shuffled = batch.permuted(&perm).unwrap();
        let table = table_for(seed, speakers, d);
        let w = ClassifierWeights::new(table.vectors().clone()).unwrap();
        let cfg = MarginConfig::default();
        let pairs = [
            (supcon_loss(&batch, 0.07, Denominator::NegativesOnly).unwrap(), supcon_loss(&shuffled, 0.07, Denominator::NegativesOnly).unwrap()),
            (sup_margin_con_loss(&batch, &cfg).unwrap(), sup_margin_con_loss(&shuffled, &cfg).unwrap()),
            (aam_softmax_loss(&batch, &w, &cfg).unwrap(), aam_softmax_loss(&shuffled, &w, &cfg).unwrap()),
            (caa_margin_con_loss(&batch, &w, &table, &cfg, (0.5, 0.5)).unwrap(), caa_margin_con_loss(&shuffled, &w, &table, &cfg, (0.5, 0.5)).unwrap()),
        ];
        for (a, b) in pairs {
            prop_assert!((a.value - b.value).abs() <= 1e-10 * a.value.abs().max(1.0));
            let expected = a.grad_embeddings.select(ndarray::Axis(0), &perm);
            prop_assert!(rel_err(&expected, &b.grad_embeddings) < 1e-10);
            if let (Some(ga), Some(gb)) = (&a.grad_class_vectors, &b.grad_class_vectors) {
                prop_assert!(rel_err(ga, gb) < 1e-10);
            }
        }
    }

    #[test]
    fn attention_depends_on_class_not_sample(seed in 0u64..10_000, n in prop::sample::select(vec![4usize, 8]), d in prop::sample::select(vec![4usize, 8, 16])) {
        let (batch, speakers) = random_batch(seed, n, d);
        let table = table_for(seed, speakers, d);
        let alpha = caa_scores(&batch, &table).unwrap();
        // replace one row's embedding; scores of every other anchor toward it are unchanged
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let j = rng.random_range(0..batch.len());
        let mut raw = batch.data().clone();
        let fresh = normalize_rows(gaussian(&mut rng, 1, d)).unwrap();
        raw.row_mut(j).assign(&fresh.row(0));
        let moved = EmbeddingBatch::new(raw, batch.labels().to_vec(), batch.views().to_vec()).unwrap();
        let alpha2 = caa_scores(&moved, &table).unwrap();
        for i in (0..batch.len()).filter(|&i| i != j) {
            for k in 0..batch.len() {
                prop_assert_eq!(alpha[[i, k]], alpha2[[i, k]]);
            }
        }
        // and same-labelled columns coincide
        let l = batch.labels();
        for i in 0..batch.len() {
            for a in 0..batch.len() {
                for b in 0..batch.len() {
                    if l[a] == l[b] {
                        prop_assert_eq!(alpha[[i, a]], alpha[[i, b]]);
                    }
                }
            }
        }
    }

    #[test]
    fn attention_normalizes_over_batch_classes(seed in 0u64..10_000, n in prop::sample::select(vec![4usize, 8]), d in prop::sample::select(vec![4usize, 16])) {
        let (batch, speakers) = random_batch(seed, n, d);
        let table = table_for(seed, speakers + 3, d);
        let att = ClassAttention::compute(&batch, &table).unwrap();
        for row in att.probabilities().rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-9);
        }
        let alpha = att.pair_scores();
        let mut reps = Vec::new();
        for c in att.classes() {
            reps.push(batch.labels().iter().position(|y| y == c).unwrap());
        }
        for i in 0..batch.len() {
            let s: f64 = reps.iter().map(|&j| alpha[[i, j]]).sum();
            prop_assert!((s - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn attention_ignores_common_logit_shift(seed in 0u64..10_000, shift in -800.0f64..800.0) {
        let (batch, speakers) = random_batch(seed, 8, 8);
        let table = table_for(seed, speakers, 8);
        // adding one vector to every class vector shifts each anchor's logits equally
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
        let dir = gaussian(&mut rng, 1, 8);
        let shifted = table.vectors() + &(dir.row(0).to_owned() * shift);
        let moved = ClassVectorTable::dense(shifted);
        let a = caa_scores(&batch, &table).unwrap();
        let b = caa_scores(&batch, &moved).unwrap();
        prop_assert!(b.iter().all(|v| v.is_finite()));
        prop_assert!(rel_err(&a, &b) < 1e-9, "{}", rel_err(&a, &b));
    }
}

#[test]
fn attention_is_generic_over_f32() {
    let (batch, speakers) = random_batch(11, 8, 8);
    let table = table_for(11, speakers, 8);
    let b32 = EmbeddingBatch::<f32>::from_unnormalized(
        batch.data().mapv(|v| v as f32),
        batch.labels().to_vec(),
        batch.views().to_vec(),
    )
    .unwrap();
    let t32 = ClassVectorTable::dense(table.vectors().mapv(|v| v as f32));
    let a64: Array2<f64> = caa_scores(&batch, &table).unwrap();
    let a32 = caa_scores(&b32, &t32).unwrap().mapv(|v| v as f64);
    assert!(rel_err(&a64, &a32) < 1e-5);
    let l32 = sup_margin_con_loss(&b32, &MarginConfig::default()).unwrap().value as f64;
    let l64 = sup_margin_con_loss(&batch, &MarginConfig::default()).unwrap().value;
    assert!((l32 - l64).abs() / l64.abs() < 1e-4);
}
