//! Optimizer, learning-rate schedule and the training loop.

mod optim;
mod trainer;

pub use optim::{poly_lr, AdamConfig, AdamState};
pub use trainer::{
    patch_dice, train, train_from, write_log_csv, AdamSettings, Divergence, LogRecord, TrainConfig,
    TrainOutcome,
};
