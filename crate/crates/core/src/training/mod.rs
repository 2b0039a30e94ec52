//! The two training stages and their shared machinery.

pub mod cache;
pub mod config;
pub mod finetune;
pub mod log;
pub mod optim;
pub mod pretrain;
pub mod step;

pub use cache::ImageCache;
pub use config::{StageConfig, StageKind};
pub use finetune::{finetune, FinetuneOutcome};
pub use log::{select_best_epoch, LogEntry, TrainLog};
pub use optim::{AdamW, AdamWConfig, StepStats};
pub use pretrain::{
    monitor_images, output_path, pretrain_anatomical, pretrain_anatomical_with, pretrain_trainable,
    PretrainOptions, PretrainOutcome,
};
pub use step::{stream_rng, train_step, Query, Stream};
