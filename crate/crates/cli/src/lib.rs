//! Configuration loading, the analysis pipeline and report emission behind
//! the `riemstab` command.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;

pub use commands::{execute, Command, Output};
pub use config::{load_config, parse_config, AnalysisConfig, Model};
pub use error::CliError;
pub use pipeline::run_pipeline;
pub use report::{emit, Format, Outcome, Report, Stage, TrajectoryRecord};

/// Parallelism cap from `RIEMSTAB_THREADS`. All computations currently run
/// sequentially, so the value is validated but cannot raise parallelism.
pub fn thread_cap(value: Option<&str>) -> Result<usize, CliError> {
    match value {
        None => Ok(1),
        Some(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Threads(v.to_string())),
        },
    }
}
