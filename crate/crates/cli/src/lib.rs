//! Experiment orchestration for the ADAR neuro-fuzzy regressor: single runs,
//! ablations, the sensitivity grid, and report emission.

pub mod report;
pub mod runner;
pub mod spec;

pub use report::{aggregate_csv, emit_report, reaggregate, runs_csv};
pub use runner::{
    ablation_points, aggregate, grid_points, param_set_label, run_experiment, run_points,
    run_single, AggregateRow, ExperimentReport, RunFailure, RunPoint, RunRow, ABLATION_VARIANTS,
};
pub use spec::{ConfigFile, DatasetSpec, ExperimentSpec, GridAxes, SchemaFile};
