//! Experiment runner around the fairness-aware multi-task training engine:
//! configuration, run orchestration, and the report/trace/checkpoint file
//! formats emitted for analysis.

pub mod checkpoint;
pub mod config;
pub mod report;
pub mod runner;
pub mod tracefile;

pub use config::{DataSource, ExperimentConfig};
pub use runner::{run_experiment, CompletedRun, Comparison};
