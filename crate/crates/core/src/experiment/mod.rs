//! Declarative experiments: config parsing, grid execution and result tables.

pub mod config;
pub mod report;
pub mod run;

pub use config::{Cell, ExperimentConfig, Metric, TaskKind};
pub use report::{collect, Report, ReportRow};
pub use run::{run_experiment, RunOptions, RunRecord, RunSummary, THREADS_ENV};
