//! Pretraining, linear evaluation and finetuning.

pub mod config;
mod pretrain;
mod transfer;

pub use config::{
    DataConfig, Framework, PretrainConfig, RunConfig, TransferConfig, TransferMode, DEFAULT_LR_GRID,
};
pub use pretrain::{
    column_csv, init_model, metrics_csv, pretext_accuracy, pretrain, sample_pretext, EpochRecord,
    PretextSample, Pretrainer,
};
pub use transfer::{finetune, linear_eval, linear_eval_bank, TransferReport, TransferRun};
