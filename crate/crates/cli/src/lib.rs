//! Configuration-driven runner for the `fklab-core` estimators.
//!
//! A config is a single JSON document naming one experiment; `run`
//! executes it and `sweep` repeats it along one numeric axis. Results are
//! rows of `mean`, `stderr`, `target` and `z` written as JSON and CSV.

pub mod config;
pub mod experiments;
pub mod report;
pub mod runner;

pub use config::{Config, ConfigError, Experiment};
pub use report::{Row, RunReport};
pub use runner::{run, sweep, Failure, Overrides};
