//! Margin-based, class-aware-attention supervised contrastive learning.
//!
//! The numerical core ([`loss`], [`encoder`], [`train::mgda_two_task`], [`eval`]) is
//! generic over the scalar type through [`Real`]; the aliases below fix it to `f64`,
//! which is what the trainer and the command line use.

pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod scalar;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Batch = loss::EmbeddingBatch<f64>;
pub type Margins = loss::MarginConfig<f64>;
pub type ClassVectors = loss::ClassVectorTable<f64>;
pub type Classifier = loss::ClassifierWeights<f64>;
pub type Report = loss::LossReport<f64>;
pub type Encoder = encoder::EncoderParams<f64>;
pub type Scores = eval::ScoredTrials<f64>;
