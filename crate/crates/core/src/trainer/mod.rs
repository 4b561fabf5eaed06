//! Filter-bank training: competitive (annealed softmax), hard-min, single and per-QP-range.

pub mod config;
pub mod dataset;
pub mod schedule;
pub mod train;

pub use config::{InitSeeds, QpRangePartition, TrainConfig, TrainMode, HARD_MIN_TEMPERATURE};
pub use dataset::{build_training_set, QpCoverage, TrainingSample};
pub use schedule::{alpha_weights, argmin, temperature, AssignmentWeights};
pub use train::{
    assignments, joint_train_step, optimizers_for, sample_losses, train, train_filters_step,
    EpochLog, StepOutcome, TrainOutcome, TrainingLog,
};
