//! Supervised training on 2-channel slices, checkpoints and evaluation.

mod checkpoint;
mod config;
mod dataset;
mod evaluate;
mod train;

pub use checkpoint::Checkpoint;
pub use config::{NumericWidth, TrainConfig};
pub use dataset::{batch, case_samples, Dataset, Sample};
pub use evaluate::{evaluate, predict_normalized, predict_volume, score_prediction, CaseScore, EvalReport};
pub use train::{train, train_from, validation_loss, LossCurve, LossRecord, TrainOutput};
