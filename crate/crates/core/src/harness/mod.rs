//! Experiment orchestration: subset sampling, hyperparameter search with
//! stratified cross-validation, retraining, scoring, and ablations.

pub mod ablation;
pub mod config;
pub mod experiment;
pub mod report;
pub mod train;

pub use ablation::{run_ablation, AblationAxis, AblationEntry};
pub use config::{
    sample_config, AblationSettings, DataConfig, ExperimentConfig, Inference, LabelMode, ModelFamily, ProbeSettings,
    SearchSpace, SeedSchedule, SyntheticSource, Task, TrialConfig,
};
pub use experiment::{
    config_hash, fit_fixed, fit_on, load_data, per_subset_csv, predict_with, run_experiment, run_experiment_on,
    run_experiment_variants, score_for_task, select_best, ExperimentReport, FixedFit, LoadedData, MeanStd, SizeReport,
    SubsetReport, Summary, TrialReport,
};
pub use report::{aggregate, load_reports, render, run_root, write_reports, AggregateRow, ReportFormat, RUN_ROOT_ENV};
pub use train::{train_model, TrainSettings, TrainedModel, TrainingLog};
