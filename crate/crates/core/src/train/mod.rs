//! Training loops: attention pre-training on the saliency or gaze task, and
//! classification fine-tuning with balanced sampling. Both run SGD with
//! momentum over per-batch averaged gradients, log one JSON record per
//! epoch, and leave the best-validation parameters in the network. Given a
//! seed and a config, the final checkpoint is bit-for-bit reproducible
//! regardless of the thread count.

mod attention;
mod config;
mod engine;
mod finetune;
mod log;

pub use attention::{train_attention, validation_loss};
pub use config::{Task, TrainConfig};
pub use finetune::{finetune_classifier, validation_scores};
pub use log::{EpochLog, TrainLog};
