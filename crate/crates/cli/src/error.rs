//! CLI error type with the process exit-code contract: 1 for parse, IO, and
//! configuration problems; 2 when a graph cannot fit its memory budget
//! (planner refusal or runtime OOM); 3 when training diverges.

use swapflow_core::exec::ExecError;
use swapflow_core::lms::PlanError;
use swapflow_core::trainer::TrainError;
use swapflow_core::{CollectiveError, GraphError, MetricsError, TopologyError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot read `{path}`: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot write `{path}`: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Collective(#[from] CollectiveError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

fn exec_code(e: &ExecError) -> i32 {
    match e {
        ExecError::DeviceOom { .. } | ExecError::HostOom { .. } => 2,
        _ => 1,
    }
}

fn plan_code(p: &PlanError) -> i32 {
    match p {
        PlanError::CannotFit { .. } => 2,
        PlanError::Exec(e) => exec_code(e),
        _ => 1,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Exec(e) => exec_code(e),
            CliError::Plan(p) => plan_code(p),
            CliError::Train(t) => match t {
                TrainError::Diverged { .. } | TrainError::ReplicaDivergence { .. } => 3,
                TrainError::Plan(p) => plan_code(p),
                TrainError::Exec(e) => exec_code(e),
                _ => 1,
            },
            _ => 1,
        }
    }
}

pub fn read_to_string(path: &std::path::Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|source| CliError::Read { path: path.display().to_string(), source })
}

pub fn write_file(path: &std::path::Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|source| CliError::Write { path: path.display().to_string(), source })?;
        }
    }
    std::fs::write(path, contents)
        .map_err(|source| CliError::Write { path: path.display().to_string(), source })
}
