//! Recurrent congestion classifiers written from scratch: a GRU, a GRU with
//! additive attention, and a logistic-regression baseline.
//!
//! Matrices are row-major `Vec<f64>` buffers. Gradients are computed
//! analytically with backpropagation through time and accumulated in a
//! fixed sample order, so training is bit-reproducible for a given seed.

mod attention;
mod checkpoint;
mod gru;
mod logistic;
mod metrics;
mod model;
mod optim;
mod train;

pub(crate) mod ops;

pub use attention::{attention, AttentionParams};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gru::{gru_cell, gru_forward, GruParams};
pub use logistic::{
    logistic_fit, logistic_log_likelihood, logistic_predict, LogisticConfig, LogisticParams,
};
pub use metrics::{classification_metrics, ClassificationMetrics};
pub use model::{
    batch_loss, loss_and_gradients, model_forward, predict, Head, ModelConfig, ModelKind,
    SequenceModel,
};
pub use optim::{adam_step, AdamState};
pub use train::{train, EpochRecord, TrainConfig, TrainingLog};
