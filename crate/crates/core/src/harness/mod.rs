//! Experiment harness: configuration, training, evaluation, variant
//! comparison, and lattice dumps.

mod compare;
mod config;
mod dump;
mod evaluate;
mod objective;
mod train;

pub use compare::{compare_variants, ComparisonRow, ComparisonTable, MeanSd};
pub use config::{parse_override, parse_pairs, ExperimentConfig, RegMode};
pub use dump::{dump_lattice, find_example, view_heatmaps, DumpSummary, ViewHeatmaps};
pub use evaluate::{
    divergence_measure, evaluate, inter_view_divergence, EvalMetrics, EvalSettings, UttEval,
};
pub use objective::{
    detached_weights, eval_view, pair_objective, DetachedWeights, ObjectiveOutput,
    ObjectiveSettings, TrainStepReport, ViewEval,
};
pub use train::{
    load_or_generate_data, objective_settings, train, train_on, training_views, write_run_dir,
    EpochReport, RunReport, StepLog, TrainOutcome,
};
