//! Training, evaluation and ablation of need-conditioned saliency models.

pub mod ablation;
pub mod cli;
mod error;
pub mod splits;
pub mod train;

pub use ablation::{run_ablation, AblationConfig, AblationRow, AblationTable, RowSpec, RunResult};
pub use error::{HarnessError, Result};
pub use splits::{fine_grained_split, twin_need_samples, FineGrainedSplit, SplitConfig};
pub use train::{
    build_vocabulary, conventional_samples, esm_config, evaluate, init_from_esm, pretrain_esm, train_model,
    EpochRecord, LogEntry, TrainConfig, TrainLog, TrainSummary,
};
