//! Training loop, evaluation, checkpoints and the ablation runner.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod trainer;

pub use ablation::{run_ablation, train_run, AblationReport, RunSummary, VariantResult};
pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use eval::{evaluate, evaluate_with, input_copy_baseline, translate};
pub use trainer::{dataset_for, train_step, EpochRecord, StepRecord, TrainOutcome, Trainer};
