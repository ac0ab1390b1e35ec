use rand::{Rng, RngCore};

use super::{check_dim, EnvError, EnvKind, EnvSpec, Environment, Observation, StepOutcome, TracePoint};

/// `[x, y, u, v]`
pub const REACH_OBS_DIM: usize = 4;

const DT: f64 = 0.05;
const MAX_ACCEL: f64 = 2.0;
const MAX_SPEED: f64 = 1.0;
const SUCCESS_RADIUS: f64 = 0.1;

/// Goal-reaching double integrator driven by primitive accelerations.
///
/// Reward is the negative distance to the per-episode goal at every step.
#[derive(Clone, Debug)]
pub struct ReachGoal {
    pub max_steps: usize,
    pos: [f64; 2],
    vel: [f64; 2],
    goal: [f64; 2],
    steps: usize,
    over: bool,
}

impl Default for ReachGoal {
    fn default() -> Self {
        Self::new()
    }
}

impl ReachGoal {
    pub fn new() -> Self {
        ReachGoal {
            max_steps: 200,
            pos: [0.0, 0.0],
            vel: [0.0, 0.0],
            goal: [0.5, 0.5],
            steps: 0,
            over: false,
        }
    }

    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2], goal: [f64; 2]) -> Observation {
        self.pos = pos;
        self.vel = vel;
        self.goal = goal;
        self.steps = 0;
        self.over = false;
        self.observe()
    }

    pub fn distance(&self) -> f64 {
        ((self.pos[0] - self.goal[0]).powi(2) + (self.pos[1] - self.goal[1]).powi(2)).sqrt()
    }
}

impl Environment for ReachGoal {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            kind: EnvKind::ReachGoal,
            obs_dim: REACH_OBS_DIM,
            goal_dim: 2,
            action_dim: 2,
            options: false,
        }
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Observation {
        let pos = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let goal = [rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8)];
        self.set_state(pos, [0.0, 0.0], goal)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        check_dim(action, 2)?;
        if self.over {
            return Err(EnvError::EpisodeOver);
        }
        for i in 0..2 {
            let a = action[i].clamp(-1.0, 1.0) * MAX_ACCEL;
            self.vel[i] = (self.vel[i] + a * DT).clamp(-MAX_SPEED, MAX_SPEED);
            self.pos[i] += self.vel[i] * DT;
            if self.pos[i].abs() > 1.0 {
                self.pos[i] = self.pos[i].clamp(-1.0, 1.0);
                self.vel[i] = 0.0;
            }
        }
        self.steps += 1;
        let reward = -self.distance();
        let truncated = self.steps >= self.max_steps;
        self.over = truncated;
        Ok(StepOutcome {
            reward,
            raw_reward: reward,
            duration: 1,
            observation: self.observe(),
            terminal: false,
            truncated,
            trace: vec![self.agent()],
            event: if self.distance() < SUCCESS_RADIUS { "near_goal" } else { "move" },
        })
    }

    fn observe(&self) -> Observation {
        Observation {
            obs: vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]],
            goal: self.goal.to_vec(),
        }
    }

    fn agent(&self) -> TracePoint {
        TracePoint {
            pos: self.pos,
            vel: Some(self.vel),
        }
    }

    fn landmarks(&self) -> Vec<[f64; 2]> {
        vec![self.goal]
    }

    fn place_agent(&mut self, pos: [f64; 2]) -> Result<Observation, EnvError> {
        self.pos = [pos[0].clamp(-1.0, 1.0), pos[1].clamp(-1.0, 1.0)];
        self.vel = [0.0, 0.0];
        Ok(self.observe())
    }

    /// Ended within the success radius of the goal.
    fn succeeded(&self) -> bool {
        self.distance() < SUCCESS_RADIUS
    }
}
