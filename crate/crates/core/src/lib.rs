//! Planning agent that learns a small set of continuous actions (affordances)
//! by differentiating the planned root value through a learned model.

pub mod affordance;
pub mod agent;
pub mod env;
pub mod gradcheck;
pub mod model;
pub mod planner;
pub mod replay;
pub mod trainer;

use thiserror::Error;

pub use grasp_autodiff as autodiff;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] grasp_autodiff::AutodiffError),
    #[error(transparent)]
    Env(#[from] env::EnvError),
    #[error("a complete tree needs {needed} nodes but the budget is {budget}")]
    NodeBudget { needed: usize, budget: usize },
    #[error("warmup incomplete: no valid segment of length {0} in the replay buffer")]
    WarmupIncomplete(usize),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("invalid tree: {0}")]
    Tree(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Numerical failures (NaN/inf) as opposed to usage errors.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::Autodiff(grasp_autodiff::AutodiffError::NonFiniteGradient(_))
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
