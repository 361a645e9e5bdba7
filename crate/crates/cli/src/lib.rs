//! Experiment harness around `gadd-core`: configuration files, the sweep
//! commands, CSV and SVG output, and the built-in invariant suite.

// Negated comparisons are how NaN gets rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chart;
pub mod commands;
pub mod config;
pub mod records;
pub mod validate;

pub use commands::GlobalOpts;
pub use config::Config;
pub use records::ExperimentRecord;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable or inconsistent configuration.
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] gadd_core::Error),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(_) | CliError::Io(_) => 1,
        }
    }
}
