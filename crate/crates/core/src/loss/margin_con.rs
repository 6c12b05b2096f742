use ndarray::Array2;

use super::attention::ClassAttention;
use super::similarity::{clamp_cosine, cos_plus_margin, cos_plus_margin_grad};
use super::supcon::anchor_sets;
use super::types::{project_tangent, Denominator, EmbeddingBatch, LossReport, MarginConfig};
use crate::error::Result;
use crate::scalar::{log_sum_exp, Real};

/// Raw output of the per-anchor contrastive kernel.
pub(crate) struct ContrastiveTerm<T> {
    pub value: T,
    /// Euclidean gradient with respect to the embedding rows (not yet projected).
    pub grad_z: Array2<T>,
    /// Gradient with respect to `alpha[i][j]` when attention weights were supplied.
    pub grad_alpha: Option<Array2<T>>,
}

/// Margin contrastive loss summed over all anchors, with optional attention weights
/// multiplying every exponent:
///
/// `L_i = -1/|P| sum_p [phi(c_ip) a_ip / tau] + log sum_a exp(c_ia a_ia / tau)`
///
/// where `phi` adds the angular margin and `a` is the attention (or one).
pub(crate) fn contrastive_term<T: Real>(
    batch: &EmbeddingBatch<T>,
    tau: T,
    margin: T,
    denominator: Denominator,
    attention: Option<&ClassAttention<T>>,
) -> Result<ContrastiveTerm<T>> {
    let z = batch.data();
    let m = batch.len();
    let mut value = T::zero();
    let mut grad_z = Array2::<T>::zeros(z.raw_dim());
    let mut grad_alpha = attention.map(|_| Array2::<T>::zeros((m, m)));
    let weight = |i: usize, j: usize| attention.map_or(T::one(), |a| a.score(i, j));

    for i in 0..m {
        let sets = anchor_sets(batch, i, denominator)?;
        let zi = z.row(i);
        let inv_p = T::one() / T::from_usize(sets.positives.len()).unwrap();
        let cos: Vec<(T, T)> = (0..m).map(|j| clamp_cosine(zi.dot(&z.row(j)))).collect();

        let logits: Vec<T> = sets
            .denominator
            .iter()
            .map(|&a| cos[a].0 * weight(i, a) / tau)
            .collect();
        let lse = log_sum_exp(logits.iter().copied());
        let mut pos = T::zero();
        // gradient w.r.t. the (clamped) cosine of each pair (i, j)
        let mut g_cos = vec![T::zero(); m];
        for &p in &sets.positives {
            let (c, _) = cos[p];
            let w = weight(i, p);
            let shifted = cos_plus_margin(c, margin);
            pos += shifted * w / tau;
            g_cos[p] -= inv_p * cos_plus_margin_grad(c, margin) * w / tau;
            if let Some(ga) = grad_alpha.as_mut() {
                ga[[i, p]] -= inv_p * shifted / tau;
            }
        }
        for (&a, &logit) in sets.denominator.iter().zip(&logits) {
            let q = (logit - lse).exp();
            g_cos[a] += q * weight(i, a) / tau;
            if let Some(ga) = grad_alpha.as_mut() {
                ga[[i, a]] += q * cos[a].0 / tau;
            }
        }
        value += lse - pos * inv_p;

        for (j, (g, (_, pass))) in g_cos.into_iter().zip(cos).enumerate() {
            let g = g * pass;
            if g == T::zero() {
                continue;
            }
            let zj = z.row(j).to_owned();
            grad_z.row_mut(i).scaled_add(g, &zj);
            let zi = z.row(i).to_owned();
            grad_z.row_mut(j).scaled_add(g, &zi);
        }
    }
    Ok(ContrastiveTerm {
        value,
        grad_z,
        grad_alpha,
    })
}

/// Supervised contrastive loss with an additive angular margin on every positive pair,
/// summed over all anchors. Negatives keep their plain cosine.
pub fn sup_margin_con_loss<T: Real>(
    batch: &EmbeddingBatch<T>,
    cfg: &MarginConfig<T>,
) -> Result<LossReport<T>> {
    cfg.validate()?;
    let term = contrastive_term(batch, cfg.tau, cfg.margin, cfg.denominator, None)?;
    let mut grad = term.grad_z;
    project_tangent(&mut grad, batch.data());
    Ok(LossReport {
        value: term.value,
        grad_embeddings: grad,
        grad_class_vectors: None,
        grad_classifier_weights: None,
    })
}
