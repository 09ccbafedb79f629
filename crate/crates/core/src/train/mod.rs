//! SGD, learning-rate and temperature schedules, the training loops
//! (single dataset and two-stage cross-protocol) and checkpoints.

mod checkpoint;
mod fit;
mod schedule;
mod sgd;

pub use checkpoint::{decode, encode, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use fit::{
    cnt_epoch, cnt_stage1, cnt_stage2_finetune, fit, prepare_batch, train_epoch, Batch, EpochMetrics, TrainConfig,
    Workers,
};
pub use schedule::{cosine_lr, tau_schedule, ScheduleConfig};
pub use sgd::{GroupLr, OptimizerConfig, Sgd};

/// Header of the per-epoch metrics CSV.
pub const METRICS_HEADER: &str = "epoch,lr,tau,loss,nme";
