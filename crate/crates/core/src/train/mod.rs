//! The epoch loop: batching, augmentation, per-regime losses, schedule
//! phases, optimizer steps, evaluation and checkpointing.

mod config;
mod evaluate;
mod history;
mod trainer;

pub use config::{Regime, TrainConfig};
pub use evaluate::{argmax, embeddings, evaluate, logits, predict};
pub use history::{EpochRecord, History, HISTORY_HEADER};
pub use trainer::{train, train_with_observer, EpochObserver, TrainOutput};
