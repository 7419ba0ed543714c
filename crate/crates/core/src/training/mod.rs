//! Composite loss, Adam, plateau decay, early stopping and the epoch loop.

pub mod adam;
pub mod config;
pub mod loss;
pub mod schedule;
pub mod trainer;

pub use adam::{adam_step, AdamState, StepPosition};
pub use config::TrainConfig;
pub use loss::{bce_jaccard_loss, loss_terms, LossTerms};
pub use schedule::{EarlyStopper, PlateauScheduler, StopDecision, IMPROVEMENT_THRESHOLD};
pub use trainer::{
    input_batch, stack_rasters, train, train_step, train_with, validate, EpochRecord, EpochReport, StopReason,
    TrainHistory,
};
