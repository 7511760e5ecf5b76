//! Experiment runner for `bayesdice-core`: JSON configs in, CSV results out.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiment;
pub mod report;

pub use config::{ExperimentConfig, ExperimentKind, Method};
pub use experiment::{run_coverage, run_selection, CoverageRow, SelectionRow};
