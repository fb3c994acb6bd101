//! Experiment orchestration: synthetic data, pretext datasets, pretraining,
//! fine-tuning, sweeps and reports.
//!
//! Every stage is a pure function of its [`ExperimentConfig`]: rerunning it
//! produces byte-identical CSV and JSON reports. Only the `wall_clock_s`
//! entry of a manifest varies between runs.

mod config;
mod data;
mod eval;
mod report;
mod sweep;
mod synth;
mod train;

pub use config::{
    DataConfig, ExperimentConfig, FinetuneConfig, LossConfig, ModelConfig, PretextConfig, PretrainConfig,
};
pub use data::{
    eval_pairs, gen_pretext_dataset, label_subset, load_pretext_dataset, make_pair, pretext_pairs,
    read_volume_dir, segmentation_splits, source_volumes, write_pairs, LabeledSet, PretextPair,
};
pub use eval::{compare_runs, evaluate_restoration, Comparison, Evaluation, Restorer, ALPHA};
pub use report::{emit, write_csv, MetricsReport, VERSION};
pub use sweep::{difficulty_sweep, run_sweep, spearman, transfer_study, TransferReport, SWEEP_COLUMNS};
pub use synth::{synth_volumes, SyntheticSet, SyntheticSpec};
pub use train::{
    finetune, finetune_model, initial_generator, pretrain, pretrain_model, segmentation_dice, PretrainOutcome,
    StageOutputs, FINETUNE_COLUMNS, PRETRAIN_COLUMNS,
};
