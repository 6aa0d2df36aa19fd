//! Teacher-forced optimization, run logs and checkpoints.

mod checkpoint;
mod log;
mod optim;
mod trainer;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, DType, Progress, MAGIC, VERSION,
};
pub use log::{EpochSummary, LogRow, TrainLog, TRAIN_LOG_HEADER};
pub use optim::{adam_step, clip_grad_norm, lr_at_step, AdamConfig, OptimizerState};
pub use trainer::{evaluate, greedy_translations, validation_loss, Evaluation, TrainConfig, Trainer};
