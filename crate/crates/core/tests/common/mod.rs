//! Shared test oracles: central finite differences and random batch builders.
#![allow(dead_code)]

use caamargin::loss::{normalize_rows, EmbeddingBatch, View};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;

/// Central-difference gradient of `f` at `x`.
pub fn central_diff(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>, h: f64) -> Array2<f64> {
    let mut grad = Array2::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in 0..x.len() {
        let (r, c) = (idx / x.ncols(), idx % x.ncols());
        let orig = probe[[r, c]];
        probe[[r, c]] = orig + h;
        let up = f(&probe);
        probe[[r, c]] = orig - h;
        let down = f(&probe);
        probe[[r, c]] = orig;
        grad[[r, c]] = (up - down) / (2.0 * h);
    }
    grad
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`.
pub fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|v| v * v).sum().sqrt();
    let na = a.mapv(|v| v * v).sum().sqrt();
    let nb = b.mapv(|v| v * v).sum().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
}

/// Random paired batch: `n` originals over at least two speakers, augmented views are
/// noisy copies. Returns the batch and the number of speakers (labels are `0..k`).
pub fn random_batch(seed: u64, n: usize, d: usize) -> (EmbeddingBatch<f64>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speakers = rng.random_range(2..=n.div_ceil(2).max(2));
    let mut labels: Vec<usize> = (0..n).map(|i| i % speakers).collect();
    // shuffle so speaker blocks are not contiguous
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }
    let centers = gaussian(&mut rng, speakers, d);
    let mut orig = gaussian(&mut rng, n, d) * 0.5;
    for (i, &y) in labels.iter().enumerate() {
        let mut row = orig.row_mut(i);
        row += &centers.row(y);
    }
    let aug = &orig + &(gaussian(&mut rng, n, d) * 0.3);
    let orig = normalize_rows(orig).unwrap();
    let aug = normalize_rows(aug).unwrap();
    (EmbeddingBatch::paired(orig, aug, &labels).unwrap(), speakers)
}

/// Rebuilds `batch` with new (unnormalized) row data, keeping labels and views.
pub fn with_rows(batch: &EmbeddingBatch<f64>, raw: &Array2<f64>) -> EmbeddingBatch<f64> {
    EmbeddingBatch::from_unnormalized(raw.clone(), batch.labels().to_vec(), batch.views().to_vec())
        .unwrap()
}

pub fn views_for(n: usize) -> Vec<View> {
    let mut v = vec![View::Original; n];
    v.extend(vec![View::Augmented; n]);
    v
}
