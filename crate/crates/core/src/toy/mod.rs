//! Synthetic task, linear model and training loop for exercising the
//! objective end to end.

pub mod model;
pub mod optim;
pub mod task;
pub mod train;

pub use model::{ModelGrads, ToyModel};
pub use optim::{AdamW, AdamWConfig, LrSchedule};
pub use task::{synth_generate, Dataset, Example, SynthTask, SynthTaskConfig};
pub use train::{
    evaluate, mean_loss, train, train_on, EpochRecord, StepRecord, TrainConfig, TrainHistory,
};
