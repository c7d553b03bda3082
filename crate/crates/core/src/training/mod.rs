//! Loss, optimizer, training loop, evaluation splits, ablations and score diagnostics.

mod ablation;
mod checkpoint;
mod config;
mod data;
mod eval;
mod inspect;
mod loss;
mod optim;
mod train;
mod trend;

pub use ablation::{
    default_jobs, run_ablation, run_ablation_cell, AblationRun, AblationTable, RowSummary,
    ABLATION_HEADER,
};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Restored, CONFIG_FILE, PARAMS_FILE, VOCAB_FILE,
};
pub use config::{AugmentConfig, ExperimentConfig, TrainConfig};
pub use data::{prepare, prepare_one, Corpus, PreparedSample};
pub use eval::{evaluate, EvalReport, SplitCount};
pub use inspect::{inspect, Inspection};
pub use loss::{loss, LossBreakdown};
pub use optim::AdamW;
pub use train::{train, EpochRecord, History, HISTORY_HEADER};
pub use trend::{binomial_upper_tail, score_trend_report, TrendReport, TrendSample};
