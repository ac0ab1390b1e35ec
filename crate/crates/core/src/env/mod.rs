//! Environments: option-level Collect and PointMass, primitive-action ReachGoal.
//!
//! Agents act in the normalized cube `[-1, 1]^d`; each environment owns the
//! affine map to its native option/action box.

mod collect;
mod point_mass;
mod reach;

pub use collect::{CollectWorld, COLLECT_OBS_DIM};
pub use point_mass::{PointMassWorld, POINT_MASS_OBS_DIM, WAYPOINTS};
pub use reach::{ReachGoal, REACH_OBS_DIM};

use rand::RngCore;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("episode is over; call reset")]
    EpisodeOver,
    #[error("action has {got} components, expected {expected}")]
    ActionDim { expected: usize, got: usize },
    #[error("unknown environment `{0}`")]
    Unknown(String),
    #[error("{0}")]
    Unsupported(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    Collect,
    PointMass,
    ReachGoal,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Collect => "collect",
            EnvKind::PointMass => "point_mass",
            EnvKind::ReachGoal => "reach_goal",
        }
    }

    pub fn build(self, gamma: f64) -> Box<dyn Environment> {
        match self {
            EnvKind::Collect => Box::new(CollectWorld::new(gamma)),
            EnvKind::PointMass => Box::new(PointMassWorld::new(gamma)),
            EnvKind::ReachGoal => Box::new(ReachGoal::new()),
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = EnvError;
    fn from_str(s: &str) -> Result<Self, EnvError> {
        match s {
            "collect" => Ok(EnvKind::Collect),
            "point_mass" | "pointmass" => Ok(EnvKind::PointMass),
            "reach_goal" | "reach" => Ok(EnvKind::ReachGoal),
            other => Err(EnvError::Unknown(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub obs_dim: usize,
    pub goal_dim: usize,
    pub action_dim: usize,
    /// Temporally extended options (true) or single primitive actions.
    pub options: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub obs: Vec<f64>,
    pub goal: Vec<f64>,
}

/// Agent configuration after one primitive step: position and, where the
/// agent has one, velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct TracePoint {
    pub pos: [f64; 2],
    pub vel: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// Discounted sum of primitive rewards over the option (plain reward for
    /// a primitive action).
    pub reward: f64,
    /// Undiscounted sum of primitive rewards.
    pub raw_reward: f64,
    /// Primitive steps consumed (1 for primitive actions).
    pub duration: usize,
    pub observation: Observation,
    pub terminal: bool,
    /// Episode ended by its step cap rather than by reaching a terminal state.
    pub truncated: bool,
    pub trace: Vec<TracePoint>,
    /// Short tag describing what happened (`collect_ok`, `wrong_order`, ...).
    pub event: &'static str,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Environment: Send {
    fn spec(&self) -> EnvSpec;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Observation;
    /// Execute one option (or primitive action) given in `[-1, 1]^d`.
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError>;
    fn observe(&self) -> Observation;
    fn agent(&self) -> TracePoint;
    /// Fixed points of interest (objects, waypoints, goal) for plotting.
    fn landmarks(&self) -> Vec<[f64; 2]>;
    /// Move the agent (at rest) to `pos` without otherwise changing the episode.
    fn place_agent(&mut self, pos: [f64; 2]) -> Result<Observation, EnvError>;
    /// Whether the last finished episode achieved the task.
    fn succeeded(&self) -> bool;
}

pub(crate) fn check_dim(action: &[f64], expected: usize) -> Result<(), EnvError> {
    if action.len() != expected {
        Err(EnvError::ActionDim {
            expected,
            got: action.len(),
        })
    } else {
        Ok(())
    }
}

/// `[-1, 1] -> [lo, hi]`, clamping out-of-range inputs.
pub(crate) fn to_box(a: f64, lo: f64, hi: f64) -> f64 {
    let a = a.clamp(-1.0, 1.0);
    lo + (a + 1.0) * 0.5 * (hi - lo)
}

/// The six orderings of three items, in lexicographic order.
pub const PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

pub(crate) fn one_hot(i: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}
