//! Loss kernels with analytic gradients.
//!
//! Every kernel takes unit-norm embeddings and returns a [`LossReport`] whose
//! gradients for unit-norm parameters (embeddings, constrained classifier weights)
//! are projected onto the tangent space of the sphere at the current point.
//! Contrastive terms are summed over all rows as anchors; classification terms are
//! averaged over rows.

mod attention;
mod caa;
mod margin_con;
mod similarity;
mod softmax;
mod supcon;
mod types;

pub use attention::{caa_scores, ClassAttention};
pub use caa::{caa_contrastive_loss, caa_margin_con_loss, caa_margin_con_loss_ablated, Ablation};
pub use margin_con::sup_margin_con_loss;
pub use similarity::{
    clamp_cosine, cos_plus_margin, cos_plus_margin_grad, cosine_similarity, COS_CLAMP_EPS,
};
pub use softmax::{
    aam_softmax_loss, am_softmax_loss, margin_softmax_loss, margin_softmax_on_rows,
    softmax_cross_entropy_loss, HeadKind,
};
pub use supcon::supcon_loss;
pub use types::{
    normalize_rows, ClassVectorTable, ClassifierWeights, Denominator, EmbeddingBatch, LossReport,
    MarginConfig, View, UNIT_NORM_TOL,
};

