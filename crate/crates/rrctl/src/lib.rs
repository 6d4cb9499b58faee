//! Scenario runner for the two-link manipulator workbench: the built-in
//! experiments, their pass/fail criteria, and CSV, SVG and JSON output.

use std::path::{Path, PathBuf};

pub mod criteria;
pub mod metrics;
pub mod runner;
pub mod scenario;
pub mod svg;
pub mod trace_io;

pub use runner::{evaluate, reevaluate, run_scenario, run_suite, simulate, Evaluation, RunReport, SuiteReport};
pub use scenario::{PlantKind, Scenario, ScenarioId};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] rrbot_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace: {0}")]
    Trace(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
