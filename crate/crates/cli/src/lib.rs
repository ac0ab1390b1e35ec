//! Experiment harness for GrASP agents: configuration, multi-seed training,
//! plots, affordance visualization and the switching analysis.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod plot;
pub mod svg;
pub mod switch;
pub mod visualize;

use config::ConfigError;
use metrics::TableError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] grasp::Error),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl From<grasp::env::EnvError> for CliError {
    fn from(e: grasp::env::EnvError) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    /// 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}
