//! Optimization loop: encoder, loss kernels, two-task loss weighting and parameter
//! updates. Everything here is `f64`.

mod config;
mod mgda;
mod optim;
mod trainer;

pub use config::{LambdaMode, LossKind, TrainConfig, TRAIN_KEYS};
pub use mgda::{combine_gradients, l2_norm, mgda_two_task};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use trainer::{
    evaluation_loss, fit, train_step, EpochRecord, FitResult, MgdaState, Model, StepMetrics, Trainer,
};
