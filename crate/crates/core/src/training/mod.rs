//! Batching, optimization, staged training and evaluation.

mod metrics;
mod optim;
mod trainer;

pub use metrics::{Confusion, Metrics};
pub use optim::{adam_step, hard_triplets, sample_triplets, AdamState};
pub use trainer::{
    evaluate, evaluate_prepared, finetune, log_to_jsonl, pretrain, train, EpochRecord, Mining, TrainConfig,
    TrainOutcome, TRAIN_KEYS,
};
