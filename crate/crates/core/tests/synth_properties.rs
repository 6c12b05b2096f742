use caamargin::synth::*;
use ndarray::Axis;

#[test]
fn within_speaker_variance_matches_spread() {
    let params = GeneratorParams { d_in: 10, spread: 0.7, outlier_rate: 0.0, ..Default::default() };
    let bank = SpeakerBank::draw(10, &params, 21).unwrap();
    let ds = bank.sample(1000).unwrap();
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for (i, &y) in ds.labels.iter().enumerate() {
        let dev = &ds.features.row(i) - &bank.speakers()[y].centroid;
        sum_sq += dev.dot(&dev);
        count += dev.len();
    }
    let var = sum_sq / count as f64;
    assert!(count >= 10_000);
    assert!((var / 0.49 - 1.0).abs() < 0.1, "variance {var}");
}

#[test]
fn dropout_zeroes_expected_fraction() {
    let params = GeneratorParams { d_in: 40, spread: 0.5, ..Default::default() };
    let ds = generate_dataset(10, 100, &params, 2).unwrap();
    let aug = augment(&ds.features, 0.1, 0.5, 8).unwrap();
    let zeros_per_row: Vec<usize> = aug
        .axis_iter(Axis(0))
        .map(|r| r.iter().filter(|v| **v == 0.0).count())
        .collect();
    assert_eq!(zeros_per_row.len(), 1000);
    let mean = zeros_per_row.iter().sum::<usize>() as f64 / 1000.0;
    // Binomial(40, 0.5) per row: the mean over 1000 rows has sd 0.1
    assert!((mean - 20.0).abs() < 0.5, "mean zeros {mean}");
}

#[test]
fn trials_agree_with_labels_and_are_seeded() {
    let params = GeneratorParams::default();
    let ds = generate_dataset(6, 8, &params, 4).unwrap();
    let trials = make_trials(&ds.labels, 50, 120, 17).unwrap();
    assert_eq!(trials.counts(), (50, 120));
    for t in &trials.trials {
        assert_ne!(t.enroll, t.test);
        assert_eq!(t.target, ds.labels[t.enroll] == ds.labels[t.test]);
    }
    let mut pairs: Vec<_> = trials.trials.iter().map(|t| (t.enroll, t.test)).collect();
    pairs.dedup();
    assert_eq!(pairs.len(), 170);
    assert_eq!(trials, make_trials(&ds.labels, 50, 120, 17).unwrap());
    assert_ne!(trials, make_trials(&ds.labels, 50, 120, 18).unwrap());
}

#[test]
fn heldout_utterances_share_centroids_but_not_noise() {
    let params = GeneratorParams { d_in: 6, spread: 0.2, ..Default::default() };
    let bank = SpeakerBank::draw(3, &params, 5).unwrap();
    let a = bank.sample(4).unwrap();
    let b = bank.sample_heldout(4).unwrap();
    assert_eq!(a.labels, b.labels);
    assert_ne!(a.features, b.features);
}
