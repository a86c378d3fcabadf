use std::path::PathBuf;

use crate::train::TrainReport;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] normloss_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("run diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged { epoch: u32, step: u64, reason: String, report: Box<TrainReport> },
}

impl HarnessError {
    /// Stable, machine-readable error category.
    pub fn category(&self) -> &'static str {
        match self {
            HarnessError::Core(e) => e.category(),
            HarnessError::Io { .. } => "io",
            HarnessError::Config(_) | HarnessError::Toml(_) => "invalid-config",
            HarnessError::Csv(_) => "io",
            HarnessError::Diverged { .. } => "diverged",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }
}
