use ndarray::Array2;

use super::similarity::clamp_cosine;
use super::types::{project_tangent, Denominator, EmbeddingBatch, LossReport};
use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Real};

/// Positive and denominator index sets of one anchor.
pub(crate) struct AnchorSets {
    pub positives: Vec<usize>,
    pub denominator: Vec<usize>,
}

pub(crate) fn anchor_sets<T: Real>(
    batch: &EmbeddingBatch<T>,
    i: usize,
    denominator: Denominator,
) -> Result<AnchorSets> {
    let labels = batch.labels();
    let yi = labels[i];
    let positives: Vec<usize> = (0..labels.len())
        .filter(|&j| j != i && labels[j] == yi)
        .collect();
    if positives.is_empty() {
        return Err(Error::EmptyPositives { row: i, speaker: yi });
    }
    let negatives = (0..labels.len()).filter(|&j| labels[j] != yi);
    let denominator: Vec<usize> = match denominator {
        Denominator::NegativesOnly => negatives.collect(),
        Denominator::AllOthers => {
            if negatives.count() == 0 {
                return Err(Error::EmptyNegatives { row: i, speaker: yi });
            }
            (0..labels.len()).filter(|&j| j != i).collect()
        }
    };
    if denominator.is_empty() {
        return Err(Error::EmptyNegatives { row: i, speaker: yi });
    }
    Ok(AnchorSets {
        positives,
        denominator,
    })
}

/// Supervised contrastive loss summed over every row of the batch as anchor.
///
/// Works on the full clamped similarity matrix: the loss depends on `Z` only through
/// `S = clamp(Z Z^T)`, so the embedding gradient is `(G + G^T) Z` where `G` is the
/// gradient with respect to `S`.
pub fn supcon_loss<T: Real>(
    batch: &EmbeddingBatch<T>,
    tau: T,
    denominator: Denominator,
) -> Result<LossReport<T>> {
    if !(tau > T::zero()) {
        return Err(Error::InvalidConfig(format!("tau {tau} must be > 0")));
    }
    let z = batch.data();
    let m = batch.len();
    let raw = z.dot(&z.t());
    let mut sim = Array2::<T>::zeros((m, m));
    let mut pass = Array2::<T>::zeros((m, m));
    for ((s, p), &r) in sim.iter_mut().zip(pass.iter_mut()).zip(raw.iter()) {
        (*s, *p) = clamp_cosine(r);
    }

    let mut value = T::zero();
    let mut g_sim = Array2::<T>::zeros((m, m));
    for i in 0..m {
        let sets = anchor_sets(batch, i, denominator)?;
        let inv_p = T::one() / T::from_usize(sets.positives.len()).unwrap();
        let logits = sets.denominator.iter().map(|&a| sim[[i, a]] / tau);
        let lse = log_sum_exp(logits.clone());
        let pos_mean: T = sets.positives.iter().map(|&p| sim[[i, p]] / tau).sum::<T>() * inv_p;
        value += lse - pos_mean;
        for &p in &sets.positives {
            g_sim[[i, p]] -= inv_p / tau;
        }
        for &a in &sets.denominator {
            g_sim[[i, a]] += (sim[[i, a]] / tau - lse).exp() / tau;
        }
    }
    g_sim *= &pass;
    let sym = &g_sim + &g_sim.t();
    let mut grad = sym.dot(z);
    project_tangent(&mut grad, z);
    Ok(LossReport {
        value,
        grad_embeddings: grad,
        grad_class_vectors: None,
        grad_classifier_weights: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::types::View;
    use ndarray::array;

    fn saturated_batch() -> EmbeddingBatch<f64> {
        // two speakers placed antipodally: positive cosines 1, negative cosines -1
        let data = array![[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]];
        EmbeddingBatch::new(
            data,
            vec![0, 1, 0, 1],
            vec![View::Original, View::Original, View::Augmented, View::Augmented],
        )
        .unwrap()
    }

    #[test]
    fn saturated_similarities_closed_form() {
        let tau = 0.07;
        let hi = 1.0 - 1e-7;
        let batch = saturated_batch();
        // each anchor: one positive at cos=1, two negatives at cos=-1
        let all = supcon_loss(&batch, tau, Denominator::AllOthers).unwrap();
        let per_anchor =
            -((hi / tau) - ((hi / tau).exp() + 2.0 * (-hi / tau).exp()).ln());
        assert!((all.value - 4.0 * per_anchor).abs() < 1e-10);
        let neg = supcon_loss(&batch, tau, Denominator::NegativesOnly).unwrap();
        let per_anchor = -((hi / tau) - (2.0 * (-hi / tau).exp()).ln());
        assert!((neg.value - 4.0 * per_anchor).abs() < 1e-10);
        // fully saturated: clamping zeroes every similarity gradient
        assert!(all.grad_embeddings.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rejects_nonpositive_tau() {
        let data = array![[1.0, 0.0], [0.0, 1.0], [0.6, 0.8], [0.8, 0.6]];
        let batch = EmbeddingBatch::new(
            data,
            vec![0, 1, 0, 1],
            vec![View::Original, View::Original, View::Augmented, View::Augmented],
        )
        .unwrap();
        assert!(supcon_loss(&batch, 0.1, Denominator::NegativesOnly).is_ok());
        assert!(supcon_loss(&batch, 0.0, Denominator::NegativesOnly).is_err());
    }
}
