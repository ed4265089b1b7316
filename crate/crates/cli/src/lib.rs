//! Scenario runner: manifests, single runs, sweeps and forecast fitting.

use std::fmt::Display;
use std::path::{Path, PathBuf};

use stochopf::forecast::ForecastError;
use stochopf::netcase::CaseError;
use stochopf::socp::BuildError;
use stochopf::solve::{InfeasibilityReport, SolveStatus};
use thiserror::Error;

pub mod fit;
pub mod manifest;
pub mod run;
pub mod sweep;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Manifest(String),
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("cannot write {}: {reason}", .path.display())]
    Io { path: PathBuf, reason: String },
    #[error("solver finished with status {status}: {}", run::describe(.report))]
    NotOptimal {
        status: SolveStatus,
        report: InfeasibilityReport,
    },
}

impl RunError {
    pub fn io(path: &Path, err: impl Display) -> Self {
        RunError::Io {
            path: path.to_path_buf(),
            reason: err.to_string(),
        }
    }
}
