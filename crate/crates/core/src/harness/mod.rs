//! Experiment runner: configuration, training loops, evaluation and CSV
//! metrics.

mod config;
mod metrics;
mod run;

pub use config::{
    DatasetConfig, ExperimentConfig, GvrSpec, ModelConfig, ObjectiveConfig, OptimizerConfig, Overrides, ShiftConfig,
};
pub use metrics::{format_g6, metrics_csv, write_metrics, MetricsRecord, Phase, CSV_HEADER};
pub use run::{
    build_classifier, eval_seed, evaluate, load_domains, load_weights, mean_sd, restore_classifier, run_adapt,
    run_experiment, run_pretrain, save_weights, seed_csv_path, sub_seed, summary_csv, sweep, sweep_threads, Domains,
    Evaluation, RunOutput, SeedOutcome,
};
