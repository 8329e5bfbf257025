//! Loss, optimizer, learning-rate schedule, the training loop and checkpoints.

pub mod checkpoint;
mod loss;
mod optim;
mod trainer;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use loss::{frame_of, smooth_l1, total_loss, total_loss_graph, LossConfig, SmoothL1Form};
pub use optim::{lr_schedule, Adam, AdamConfig};
pub use trainer::{
    batch_loss, dataset_loss, dataset_mpjpe, EpochLog, NoopObserver, RngState, Sample, StepLog, TrainConfig,
    TrainObserver, TrainState, TrainSummary, Trainer,
};
