use ndarray::Array2;

use super::attention::ClassAttention;
use super::margin_con::contrastive_term;
use super::softmax::aam_softmax_loss;
use super::types::{
    project_tangent, ClassVectorTable, ClassifierWeights, EmbeddingBatch, LossReport,
    MarginConfig,
};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Which parts of the attention-weighted margin contrastive term are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum Ablation {
    #[default]
    Full,
    /// Contrastive margin set to zero; the classification margin is kept.
    WithoutMargin,
    /// Every attention weight forced to one.
    WithoutCaa,
    WithoutBoth,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::WithoutMargin,
        Ablation::WithoutCaa,
        Ablation::WithoutBoth,
    ];

    pub fn uses_attention(self) -> bool {
        matches!(self, Ablation::Full | Ablation::WithoutMargin)
    }

    pub fn uses_margin(self) -> bool {
        matches!(self, Ablation::Full | Ablation::WithoutCaa)
    }

    /// Row label used in ablation reports.
    pub fn label(self) -> &'static str {
        match self {
            Ablation::Full => "CAAMarginCon",
            Ablation::WithoutMargin => "w/o Margin",
            Ablation::WithoutCaa => "w/o CAA",
            Ablation::WithoutBoth => "w/o CAA and Margin",
        }
    }

    /// Short identifier for file names and config values.
    pub fn key(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::WithoutMargin => "no_margin",
            Ablation::WithoutCaa => "no_caa",
            Ablation::WithoutBoth => "no_both",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.key() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown ablation variant {s:?}")))
    }
}

/// The attention-weighted margin contrastive term on its own.
///
/// `grad_class_vectors` has the shape of the whole table; rows of speakers absent from
/// the batch stay zero. Without attention the class vectors are unused and the
/// gradient is all zeros.
pub fn caa_contrastive_loss<T: Real>(
    batch: &EmbeddingBatch<T>,
    table: &ClassVectorTable<T>,
    cfg: &MarginConfig<T>,
    ablation: Ablation,
) -> Result<LossReport<T>> {
    cfg.validate()?;
    let attention = if ablation.uses_attention() {
        Some(ClassAttention::compute(batch, table)?)
    } else {
        None
    };
    let margin = if ablation.uses_margin() {
        cfg.margin
    } else {
        T::zero()
    };
    let term = contrastive_term(batch, cfg.tau, margin, cfg.denominator, attention.as_ref())?;
    let mut grad_z = term.grad_z;
    let grad_table = match (&attention, &term.grad_alpha) {
        (Some(att), Some(ga)) => {
            let (gz, gt) = att.backprop(ga, batch, table);
            grad_z += &gz;
            gt
        }
        _ => Array2::zeros(table.vectors().raw_dim()),
    };
    project_tangent(&mut grad_z, batch.data());
    Ok(LossReport {
        value: term.value,
        grad_embeddings: grad_z,
        grad_class_vectors: Some(grad_table),
        grad_classifier_weights: None,
    })
}

/// `lambda1 * AAM-softmax + lambda2 * attention-weighted margin contrastive term`.
pub fn caa_margin_con_loss<T: Real>(
    batch: &EmbeddingBatch<T>,
    weights: &ClassifierWeights<T>,
    table: &ClassVectorTable<T>,
    cfg: &MarginConfig<T>,
    lambdas: (T, T),
) -> Result<LossReport<T>> {
    caa_margin_con_loss_ablated(batch, weights, table, cfg, lambdas, Ablation::Full)
}

pub fn caa_margin_con_loss_ablated<T: Real>(
    batch: &EmbeddingBatch<T>,
    weights: &ClassifierWeights<T>,
    table: &ClassVectorTable<T>,
    cfg: &MarginConfig<T>,
    lambdas: (T, T),
    ablation: Ablation,
) -> Result<LossReport<T>> {
    let (l1, l2) = lambdas;
    if !(l1 >= T::zero() && l2 >= T::zero()) {
        return Err(Error::InvalidConfig(format!(
            "loss weights must be non-negative, got ({l1}, {l2})"
        )));
    }
    let cls = aam_softmax_loss(batch, weights, cfg)?;
    let con = caa_contrastive_loss(batch, table, cfg, ablation)?;
    Ok(combine(cls, con, l1, l2))
}

/// Weighted sum of a classification report and a contrastive report.
pub(crate) fn combine<T: Real>(cls: LossReport<T>, con: LossReport<T>, l1: T, l2: T) -> LossReport<T> {
    let mut grad_embeddings = cls.grad_embeddings * l1;
    grad_embeddings.scaled_add(l2, &con.grad_embeddings);
    LossReport {
        value: l1 * cls.value + l2 * con.value,
        grad_embeddings,
        grad_class_vectors: con.grad_class_vectors.map(|g| g * l2),
        grad_classifier_weights: cls.grad_classifier_weights.map(|g| g * l1),
    }
}
