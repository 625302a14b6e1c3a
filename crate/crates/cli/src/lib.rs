//! Experiment harness: config parsing, seeded batch execution, CSV
//! emission, SVG plots, and the pass/fail reports the binary's exit code
//! is built from.

pub mod config;
pub mod csvio;
pub mod experiments;
pub mod report;
pub mod svg;

pub use config::ExperimentConfig;
pub use experiments::{run_experiment, RunOptions};
pub use report::{CheckResult, ExperimentReport};
