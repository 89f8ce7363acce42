//! Experiment orchestration.
//!
//! An [`ExperimentConfig`] names an objective, an optimizer and a query
//! budget. [`run_experiment`] runs every seed until the next step would
//! exceed the budget and records the trajectory every `eval_every` steps
//! and at the final step. Results are written as one CSV per seed.

mod compare;
mod config;
mod record;
mod run;
mod spectrum;

pub use compare::{
    compare_budget_to_target, load_trajectories, queries_to_target, render_table, write_table_csv, TargetRow,
};
pub use config::{DatasetSpec, ExperimentConfig, ObjectiveSpec, OptimizerSpec, Problem, OUTPUT_ROOT_ENV};
pub use record::{emit_csv, read_csv, TrajectoryRecord, CSV_HEADER};
pub use run::{run_comparison, run_experiment, run_trial, ExperimentResult, TrialResult, TrialStatus};
pub use spectrum::{spectrum_report, tail_mass, SpectrumReport};
