//! Loss, optimizer and the training loop.

mod loss;
mod optim;
mod trainer;

pub use loss::{
    cross_entropy_terms, l2_penalty, median_frequency_weights, objective, record_objective, weighted_cross_entropy,
    LossConfig, RecordedObjective,
};
pub use optim::{adadelta_update, AdadeltaState, DEFAULT_EPS, DEFAULT_RHO};
pub use trainer::{epoch_order, evaluate, train, EpochRecord, TrainConfig, TrainState, TrainingLog, LOG_HEADER};
