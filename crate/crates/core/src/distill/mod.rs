//! Teacher training with cross-entropy and student training with the
//! distillation objective, sharing one optimizer and early-stopping regime.

mod loss;
mod train;

pub use loss::{cross_entropy, kd_loss, KdConfig, KdOutput, LogitPair};
pub use train::{
    distill_student, train_student_supervised, train_teacher, EarlyStopping, EpochRecord, FitContext, TrainConfig,
    TrainData, TrainingLog,
};
