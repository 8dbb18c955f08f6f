//! Patch-based training with a per-pixel softmax over candidate disparities.

pub mod config;
pub mod loss;
pub mod patch;
pub mod trainer;

pub use config::TrainConfig;
pub use loss::{batch_loss, batch_loss_with_input_grads, BatchLoss, InputGrads};
pub use patch::{sample_patch, PatchExample, Target};
pub use trainer::{train, LogRecord, TrainOutcome};
