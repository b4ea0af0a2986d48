//! Scenario runner for the hybrid estimator: configuration files, the
//! `check`/`simulate`/`bench`/`reproduce` commands and their file outputs.

// NaN-rejecting comparisons are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod output;
pub mod scenarios;

pub use config::{ConfigError, Scenario, ScenarioConfig};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// Bad arguments or configuration.
    pub const CONFIG: i32 = 1;
    /// Finished, but some check or bound did not hold.
    pub const WARNINGS: i32 = 2;
    /// The estimator could not complete the run.
    pub const RUNTIME: i32 = 3;
}
