use ndarray::{Array1, Array2};

use super::similarity::{clamp_cosine, cos_plus_margin, cos_plus_margin_grad};
use super::types::{
    project_tangent, ClassifierWeights, EmbeddingBatch, LossReport, MarginConfig, UNIT_NORM_TOL,
};
use crate::error::{Error, Result};
use crate::scalar::{log_sum_exp, Real};

/// Target-logit treatment of a softmax classification head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Plain linear logits `w_k . z`, no scale or margin, unconstrained weights.
    Linear,
    /// `s (cos(theta_y) - m)` on the target class.
    AdditiveCosine,
    /// `s cos(theta_y + m)` on the target class.
    AdditiveAngular,
}

fn check_inputs<T: Real>(
    z: &Array2<T>,
    labels: &[usize],
    weights: &ClassifierWeights<T>,
    unit_rows: bool,
) -> Result<()> {
    if weights.dim() != z.ncols() {
        return Err(Error::DimensionMismatch {
            what: "classifier weight dimension",
            expected: z.ncols(),
            found: weights.dim(),
        });
    }
    if labels.len() != z.nrows() {
        return Err(Error::DimensionMismatch {
            what: "labels",
            expected: z.nrows(),
            found: labels.len(),
        });
    }
    let classes = weights.classes();
    if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    if unit_rows {
        for (row, w) in weights.weights().outer_iter().enumerate() {
            let norm = w.dot(&w).sqrt().to_f64_lossy();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::NotUnitNorm { row, norm });
            }
        }
    }
    Ok(())
}

/// Softmax cross-entropy of a classification head, averaged over all batch rows.
pub fn margin_softmax_loss<T: Real>(
    batch: &EmbeddingBatch<T>,
    weights: &ClassifierWeights<T>,
    cfg: &MarginConfig<T>,
    kind: HeadKind,
) -> Result<LossReport<T>> {
    margin_softmax_on_rows(batch.data(), batch.labels(), weights, cfg, kind)
}

/// [`margin_softmax_loss`] on bare unit-norm rows and labels, without the pairing
/// requirements of an [`EmbeddingBatch`].
pub fn margin_softmax_on_rows<T: Real>(
    z: &Array2<T>,
    labels: &[usize],
    weights: &ClassifierWeights<T>,
    cfg: &MarginConfig<T>,
    kind: HeadKind,
) -> Result<LossReport<T>> {
    cfg.validate()?;
    let constrained = kind != HeadKind::Linear;
    check_inputs(z, labels, weights, constrained)?;
    let w = weights.weights();
    let rows = z.nrows();
    let inv_rows = T::one() / T::from_usize(rows).unwrap();
    let (s, m) = (cfg.scale, cfg.margin);

    let raw = z.dot(&w.t());
    // gradient of the mean loss w.r.t. the raw dot products
    let mut g_raw = Array2::<T>::zeros(raw.raw_dim());
    let mut value = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        let mut logits = Array1::<T>::zeros(w.nrows());
        let mut dlogit = Array1::<T>::zeros(w.nrows());
        for k in 0..w.nrows() {
            let r = raw[[i, k]];
            (logits[k], dlogit[k]) = match kind {
                HeadKind::Linear => (r, T::one()),
                _ => {
                    let (c, pass) = clamp_cosine(r);
                    if k != y {
                        (s * c, s * pass)
                    } else if kind == HeadKind::AdditiveCosine {
                        (s * (c - m), s * pass)
                    } else {
                        (s * cos_plus_margin(c, m), s * cos_plus_margin_grad(c, m) * pass)
                    }
                }
            };
        }
        let lse = log_sum_exp(logits.iter().copied());
        value += lse - logits[y];
        for k in 0..w.nrows() {
            let p = (logits[k] - lse).exp();
            let target = if k == y { T::one() } else { T::zero() };
            g_raw[[i, k]] = (p - target) * dlogit[k] * inv_rows;
        }
    }
    let mut grad_z = g_raw.dot(w);
    let mut grad_w = g_raw.t().dot(z);
    project_tangent(&mut grad_z, z);
    if constrained {
        project_tangent(&mut grad_w, w);
    }
    Ok(LossReport {
        value: value * inv_rows,
        grad_embeddings: grad_z,
        grad_class_vectors: None,
        grad_classifier_weights: Some(grad_w),
    })
}

/// Additive angular margin softmax (ArcFace-style) over unit-norm class weights.
pub fn aam_softmax_loss<T: Real>(
    batch: &EmbeddingBatch<T>,
    weights: &ClassifierWeights<T>,
    cfg: &MarginConfig<T>,
) -> Result<LossReport<T>> {
    margin_softmax_loss(batch, weights, cfg, HeadKind::AdditiveAngular)
}

/// Additive cosine margin softmax (CosFace-style).
pub fn am_softmax_loss<T: Real>(
    batch: &EmbeddingBatch<T>,
    weights: &ClassifierWeights<T>,
    cfg: &MarginConfig<T>,
) -> Result<LossReport<T>> {
    margin_softmax_loss(batch, weights, cfg, HeadKind::AdditiveCosine)
}

/// Plain softmax cross-entropy over linear logits.
pub fn softmax_cross_entropy_loss<T: Real>(
    batch: &EmbeddingBatch<T>,
    weights: &ClassifierWeights<T>,
) -> Result<LossReport<T>> {
    margin_softmax_loss(batch, weights, &MarginConfig::default(), HeadKind::Linear)
}
