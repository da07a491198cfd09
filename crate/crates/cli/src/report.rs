//! Report types and their JSON / CSV emission.
//!
//! Reports contain no wall-clock data, so identical configurations and
//! seeds produce byte-identical JSON.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use riemstab_core::flows::Trajectory;

use crate::config::AnalysisConfig;
use crate::error::CliError;

/// Overall result; maps onto the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Passed,
    HypothesisViolated,
    VerificationFailed,
    Error,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Passed => 0,
            Outcome::Error => 1,
            Outcome::HypothesisViolated => 2,
            Outcome::VerificationFailed => 3,
        }
    }
}

/// Result of one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Stage<T> {
    Passed {
        result: T,
    },
    /// Ran, but its check did not hold. `outcome` says whether a hypothesis
    /// or a verification failed.
    Failed {
        outcome: Outcome,
        reason: String,
        result: T,
    },
    Skipped {
        reason: String,
    },
    Error {
        message: String,
    },
}

impl<T> Stage<T> {
    pub fn result(&self) -> Option<&T> {
        match self {
            Stage::Passed { result } | Stage::Failed { result, .. } => Some(result),
            _ => None,
        }
    }

    pub fn passed(&self) -> bool {
        matches!(self, Stage::Passed { .. })
    }

    /// Outcome this stage contributes; skipped stages contribute nothing.
    pub fn outcome(&self) -> Option<Outcome> {
        match self {
            Stage::Passed { .. } => Some(Outcome::Passed),
            Stage::Failed { outcome, .. } => Some(*outcome),
            Stage::Skipped { .. } => None,
            Stage::Error { .. } => Some(Outcome::Error),
        }
    }

    pub fn status(&self) -> &'static str {
        match self {
            Stage::Passed { .. } => "passed",
            Stage::Failed { .. } => "failed",
            Stage::Skipped { .. } => "skipped",
            Stage::Error { .. } => "error",
        }
    }

    pub fn skipped(reason: impl Into<String>) -> Self {
        Stage::Skipped { reason: reason.into() }
    }

    pub fn error(e: impl std::fmt::Display) -> Self {
        Stage::Error { message: e.to_string() }
    }
}

/// A trajectory attached to a report, sampled on its RK4 grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub label: String,
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
}

impl TrajectoryRecord {
    pub fn from_trajectory(label: impl Into<String>, traj: &Trajectory) -> Self {
        Self {
            label: label.into(),
            times: traj.times.clone(),
            points: traj.points.iter().map(|p| p.as_slice().to_vec()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub config: AnalysisConfig,
    pub stages: crate::pipeline::Stages,
    pub trajectories: Vec<TrajectoryRecord>,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Pretty JSON with a trailing newline; field order follows the types.
pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// `t,x1,...,xn` followed by one row per sample.
pub fn trajectory_csv(dim: usize, record: Option<&TrajectoryRecord>) -> String {
    let mut out = String::from("t");
    for i in 1..=dim {
        let _ = write!(out, ",x{i}");
    }
    out.push('\n');
    if let Some(r) = record {
        for (t, p) in r.times.iter().zip(&r.points) {
            let _ = write!(out, "{t}");
            for c in p {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
    }
    out
}

/// Writes the report into `dir`: `report.json` for JSON, one
/// `<label>.csv` per attached trajectory for CSV (a header-only
/// `trajectories.csv` when there are none). Returns the written paths.
pub fn emit(report: &Report, format: Format, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    match format {
        Format::Json => files.push((dir.join("report.json"), to_json(report)?)),
        Format::Csv => {
            let dim = report.config.dim();
            if report.trajectories.is_empty() {
                files.push((dir.join("trajectories.csv"), trajectory_csv(dim, None)));
            }
            for r in &report.trajectories {
                files.push((dir.join(format!("{}.csv", r.label)), trajectory_csv(dim, Some(r))));
            }
        }
    }
    let mut written = Vec::new();
    for (path, text) in files {
        std::fs::write(&path, text).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}
