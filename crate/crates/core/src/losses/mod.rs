//! Margin-softmax losses, training schedules and a classification-head trainer.

mod head;
mod margin;
mod schedule;

pub use head::{
    accuracy, fit_head, init_head, lmf_config, loss_from_flat, FitConfig, FitTrace, TrainStage, LMF_CHUNK_FRAMES,
    LMF_MARGIN, LOSS_KEYS,
};
pub use margin::{loss_and_grad, margin_logits, target_transform, HeadParams, LossGrad, LossKind, MarginLossConfig};
pub use schedule::{Ramp, SchedulerConfig, SCHEDULER_KEYS};
