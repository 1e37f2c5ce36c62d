//! Experiment harness around `ies-core`: run configuration, profile files,
//! the mode × scenario × seed matrix and report emission.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod profiles;
pub mod report;

pub use config::{Algorithm, Mode, RunConfig};
pub use error::{HarnessError, Result};
pub use experiment::{run_matrix, AgentKey, Cell, Experiment};
pub use report::{emit, Format, Report, RunRecord};
