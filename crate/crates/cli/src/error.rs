//! Command errors and their exit codes.

use pipesim::{BuildError, ConfigError, DeadlockError, RecompError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Conflict(String),
    #[error(transparent)]
    Deadlock(#[from] DeadlockError),
    #[error("{0}")]
    Other(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for dependency conflicts, 4 for
    /// deadlocks and 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Conflict(_) => 3,
            CliError::Deadlock(_) => 4,
            _ => 1,
        }
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> CliError {
        match e {
            BuildError::Sched(e) => CliError::Usage(e.to_string()),
            BuildError::Recomp(RecompError::ConflictUnresolvable { k, report }) => {
                let edges: Vec<String> = report
                    .conflicts
                    .iter()
                    .map(|c| format!("{} -> {} [stage {}, {:?}]", c.pred, c.succ, c.stage, c.kind))
                    .collect();
                CliError::Conflict(format!(
                    "dependency conflict at k={k}: {}",
                    edges.join("; ")
                ))
            }
            BuildError::Recomp(
                e @ (RecompError::IncompatibleStrategy(_) | RecompError::WrongMode(_)),
            ) => CliError::Usage(e.to_string()),
            BuildError::Recomp(e) => CliError::Other(e.to_string()),
        }
    }
}
