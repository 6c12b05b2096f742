//! Verification metrics and embedding geometry diagnostics.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::loss::{cosine_similarity, EmbeddingBatch};
use crate::scalar::{log_sum_exp, Real};
use crate::synth::TrialList;

/// Trial scores with their target flags, in trial order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrials<T> {
    pub scores: Vec<T>,
    pub targets: Vec<bool>,
}

impl<T: Real> ScoredTrials<T> {
    pub fn new(scores: Vec<T>, targets: Vec<bool>) -> Result<Self> {
        if scores.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                what: "trial scores",
                expected: targets.len(),
                found: scores.len(),
            });
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::InvalidConfig("NaN trial score".into()));
        }
        Ok(Self { scores, targets })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn class_counts(&self) -> Result<(usize, usize)> {
        let t = self.targets.iter().filter(|t| **t).count();
        let n = self.targets.len() - t;
        if t == 0 || n == 0 {
            return Err(Error::SingleClass {
                targets: t,
                nontargets: n,
            });
        }
        Ok((t, n))
    }
}

/// Cosine score of every trial between rows of `embeddings`.
pub fn score_trials<T: Real>(embeddings: &Array2<T>, trials: &TrialList) -> Result<ScoredTrials<T>> {
    let n = embeddings.nrows();
    let mut scores = Vec::with_capacity(trials.len());
    let mut targets = Vec::with_capacity(trials.len());
    for t in &trials.trials {
        for id in [t.enroll, t.test] {
            if id >= n {
                return Err(Error::UnknownId(id));
            }
        }
        scores.push(cosine_similarity(embeddings.row(t.enroll), embeddings.row(t.test))?);
        targets.push(t.target);
    }
    ScoredTrials::new(scores, targets)
}

/// Operating point of the detector "accept when score >= threshold".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint<T> {
    pub threshold: T,
    pub p_miss: f64,
    pub p_fa: f64,
}

/// Every distinct operating point, from accept-all (threshold = lowest score) to
/// accept-none (threshold = +inf). Equal scores are grouped.
pub fn roc_points<T: Real>(scored: &ScoredTrials<T>) -> Result<Vec<OperatingPoint<T>>> {
    let (n_t, n_n) = scored.class_counts()?;
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored.scores[a].partial_cmp(&scored.scores[b]).expect("no NaN"));
    let mut points = Vec::with_capacity(order.len() + 1);
    let (mut misses, mut rejected_nontargets) = (0usize, 0usize);
    let mut k = 0;
    while k < order.len() {
        let s = scored.scores[order[k]];
        points.push(OperatingPoint {
            threshold: s,
            p_miss: misses as f64 / n_t as f64,
            p_fa: (n_n - rejected_nontargets) as f64 / n_n as f64,
        });
        while k < order.len() && scored.scores[order[k]] == s {
            if scored.targets[order[k]] {
                misses += 1;
            } else {
                rejected_nontargets += 1;
            }
            k += 1;
        }
    }
    points.push(OperatingPoint {
        threshold: T::infinity(),
        p_miss: 1.0,
        p_fa: 0.0,
    });
    Ok(points)
}

/// Equal error rate from a list of operating points sorted by threshold, linearly
/// interpolated between the two points that straddle `p_miss = p_fa`.
pub fn eer_from_points<T: Real>(points: &[OperatingPoint<T>]) -> (f64, T) {
    let k = points
        .iter()
        .position(|p| p.p_miss >= p.p_fa)
        .expect("accept-none point has p_miss >= p_fa");
    if k == 0 {
        return (points[0].p_miss, points[0].threshold);
    }
    let (a, b) = (points[k - 1], points[k]);
    let (da, db) = (a.p_miss - a.p_fa, b.p_miss - b.p_fa);
    let f = -da / (db - da);
    let eer = a.p_miss + f * (b.p_miss - a.p_miss);
    let threshold = if b.threshold.is_finite() {
        a.threshold + T::lit(f) * (b.threshold - a.threshold)
    } else {
        a.threshold
    };
    (eer, threshold)
}

/// Equal error rate as a fraction, and the (interpolated) threshold where it occurs.
pub fn eer<T: Real>(scored: &ScoredTrials<T>) -> Result<(f64, T)> {
    Ok(eer_from_points(&roc_points(scored)?))
}

/// Detection cost operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self {
            p_target: 0.01,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }
}

impl DcfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "p_target {} outside (0, 1)",
                self.p_target
            )));
        }
        if !(self.c_miss > 0.0 && self.c_fa > 0.0) {
            return Err(Error::InvalidConfig("DCF costs must be > 0".into()));
        }
        Ok(())
    }

    pub fn cost(&self, p_miss: f64, p_fa: f64) -> f64 {
        self.c_miss * self.p_target * p_miss + self.c_fa * (1.0 - self.p_target) * p_fa
    }

    /// Cost of the best trivial system (accept all or reject all).
    pub fn default_cost(&self) -> f64 {
        (self.c_miss * self.p_target).min(self.c_fa * (1.0 - self.p_target))
    }
}

pub fn min_dcf_from_points<T: Real>(points: &[OperatingPoint<T>], params: &DcfParams) -> (f64, T) {
    let norm = params.default_cost();
    let mut best = (f64::INFINITY, points[0].threshold);
    for p in points {
        let c = params.cost(p.p_miss, p.p_fa) / norm;
        if c < best.0 {
            best = (c, p.threshold);
        }
    }
    best
}

/// Minimum normalized detection cost over all thresholds, and its threshold.
pub fn min_dcf<T: Real>(scored: &ScoredTrials<T>, params: &DcfParams) -> Result<(f64, T)> {
    params.validate()?;
    Ok(min_dcf_from_points(&roc_points(scored)?, params))
}

/// Alignment (mean `|z_i - z_j|^alpha` over same-label pairs) and uniformity
/// (`log mean exp(-t |z_i - z_j|^2)` over all distinct pairs) of unit embeddings.
pub fn alignment_uniformity_rows<T: Real>(
    z: &Array2<T>,
    labels: &[usize],
    alpha: T,
    t: T,
) -> Result<(T, T)> {
    if labels.len() != z.nrows() {
        return Err(Error::DimensionMismatch {
            what: "labels",
            expected: z.nrows(),
            found: labels.len(),
        });
    }
    let n = z.nrows();
    let gram = z.dot(&z.t());
    let mut align = T::zero();
    let mut positives = 0usize;
    let mut kernel = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let sq = (gram[[i, i]] + gram[[j, j]] - gram[[i, j]] * T::lit(2.0)).max(T::zero());
            if labels[i] == labels[j] {
                align += sq.sqrt().powf(alpha);
                positives += 1;
            }
            kernel.push(-t * sq);
        }
    }
    if positives == 0 || kernel.is_empty() {
        return Err(Error::InvalidBatch(
            "alignment needs at least one same-label pair".into(),
        ));
    }
    let alignment = align / T::from_usize(positives).unwrap();
    let uniformity =
        log_sum_exp(kernel.iter().copied()) - T::from_usize(kernel.len()).unwrap().ln();
    Ok((alignment, uniformity))
}

/// [`alignment_uniformity_rows`] on a paired batch, with the usual `alpha = 2`, `t = 2`
/// available through [`alignment_uniformity_default`].
pub fn alignment_uniformity<T: Real>(batch: &EmbeddingBatch<T>, alpha: T, t: T) -> (T, T) {
    alignment_uniformity_rows(batch.data(), batch.labels(), alpha, t)
        .expect("paired batches always contain positive pairs")
}

pub fn alignment_uniformity_default<T: Real>(batch: &EmbeddingBatch<T>) -> (T, T) {
    alignment_uniformity(batch, T::lit(2.0), T::lit(2.0))
}
