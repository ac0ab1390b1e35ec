use rand::{Rng, RngCore};

use super::{
    check_dim, one_hot, to_box, EnvError, EnvKind, EnvSpec, Environment, Observation, StepOutcome,
    TracePoint, PERMUTATIONS,
};

/// `[x, y, u, v, passed 0, passed 1, passed 2]`
pub const POINT_MASS_OBS_DIM: usize = 7;

/// Fixed waypoint locations in the unit square.
pub const WAYPOINTS: [[f64; 2]; 3] = [[0.2, 0.25], [0.8, 0.25], [0.5, 0.8]];

const DT: f64 = 0.05;
const MAX_SPEED: f64 = 1.0;
const MAX_ACCEL: f64 = 2.0;
const KP: f64 = 8.0;
const KD: f64 = 5.0;

/// Point mass that must pass the three waypoints in the goal order.
///
/// Options are goto-configuration targets `(x, y, u, v)` tracked by a PD
/// controller.
#[derive(Clone, Debug)]
pub struct PointMassWorld {
    pub gamma: f64,
    pub radius: f64,
    pub max_steps: usize,
    pub option_steps: usize,
    pos: [f64; 2],
    vel: [f64; 2],
    goal: usize,
    progress: usize,
    steps: usize,
    over: bool,
    success: bool,
}

impl PointMassWorld {
    pub fn new(gamma: f64) -> Self {
        PointMassWorld {
            gamma,
            radius: 0.1,
            max_steps: 500,
            option_steps: 50,
            pos: [0.5, 0.5],
            vel: [0.0, 0.0],
            goal: 0,
            progress: 0,
            steps: 0,
            over: false,
            success: false,
        }
    }

    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2], goal: usize) -> Observation {
        self.pos = pos;
        self.vel = vel;
        self.goal = goal;
        self.progress = 0;
        self.steps = 0;
        self.over = false;
        self.success = false;
        self.check_waypoint();
        self.observe()
    }

    fn check_waypoint(&mut self) {
        if self.progress < 3 {
            let next = PERMUTATIONS[self.goal][self.progress];
            let w = WAYPOINTS[next];
            let d = ((self.pos[0] - w[0]).powi(2) + (self.pos[1] - w[1]).powi(2)).sqrt();
            if d < self.radius {
                self.progress += 1;
            }
        }
    }

    /// One semi-implicit double-integrator step; the walls absorb velocity.
    fn integrate(&mut self, accel: [f64; 2]) {
        for i in 0..2 {
            let a = accel[i].clamp(-MAX_ACCEL, MAX_ACCEL);
            self.vel[i] = (self.vel[i] + a * DT).clamp(-MAX_SPEED, MAX_SPEED);
            self.pos[i] += self.vel[i] * DT;
            if self.pos[i] < 0.0 || self.pos[i] > 1.0 {
                self.pos[i] = self.pos[i].clamp(0.0, 1.0);
                self.vel[i] = 0.0;
            }
        }
    }
}

impl Environment for PointMassWorld {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            kind: EnvKind::PointMass,
            obs_dim: POINT_MASS_OBS_DIM,
            goal_dim: 6,
            action_dim: 4,
            options: true,
        }
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Observation {
        let pos = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let goal = rng.gen_range(0..PERMUTATIONS.len());
        self.set_state(pos, [0.0, 0.0], goal)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        check_dim(action, 4)?;
        if self.over {
            return Err(EnvError::EpisodeOver);
        }
        let tp = [to_box(action[0], 0.0, 1.0), to_box(action[1], 0.0, 1.0)];
        let tv = [
            to_box(action[2], -MAX_SPEED, MAX_SPEED),
            to_box(action[3], -MAX_SPEED, MAX_SPEED),
        ];
        let mut trace = Vec::new();
        let mut reward = 0.0;
        let mut raw = 0.0;
        let mut n = 0;
        let mut terminal = false;
        let mut event = "timeout";
        while n < self.option_steps && self.steps < self.max_steps {
            let accel = [
                KP * (tp[0] - self.pos[0]) + KD * (tv[0] - self.vel[0]),
                KP * (tp[1] - self.pos[1]) + KD * (tv[1] - self.vel[1]),
            ];
            self.integrate(accel);
            let before = self.progress;
            self.check_waypoint();
            if self.progress > before {
                event = "waypoint";
            }
            self.steps += 1;
            trace.push(self.agent());
            if self.progress == 3 {
                reward += self.gamma.powi(n as i32);
                raw += 1.0;
                n += 1;
                terminal = true;
                self.success = true;
                event = "success";
                break;
            }
            n += 1;
            let dp = ((self.pos[0] - tp[0]).powi(2) + (self.pos[1] - tp[1]).powi(2)).sqrt();
            let dv = ((self.vel[0] - tv[0]).powi(2) + (self.vel[1] - tv[1]).powi(2)).sqrt();
            if dp < 0.05 && dv < 0.1 {
                if event == "timeout" {
                    event = "reached";
                }
                break;
            }
        }
        let truncated = !terminal && self.steps >= self.max_steps;
        self.over = terminal || truncated;
        Ok(StepOutcome {
            reward,
            raw_reward: raw,
            duration: n,
            observation: self.observe(),
            terminal,
            truncated,
            trace,
            event,
        })
    }

    fn observe(&self) -> Observation {
        let mut obs = vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]];
        let order = PERMUTATIONS[self.goal];
        let mut passed = [0.0; 3];
        for &w in &order[..self.progress] {
            passed[w] = 1.0;
        }
        obs.extend_from_slice(&passed);
        Observation {
            obs,
            goal: one_hot(self.goal, 6),
        }
    }

    fn agent(&self) -> TracePoint {
        TracePoint {
            pos: self.pos,
            vel: Some(self.vel),
        }
    }

    fn landmarks(&self) -> Vec<[f64; 2]> {
        WAYPOINTS.to_vec()
    }

    fn place_agent(&mut self, pos: [f64; 2]) -> Result<Observation, EnvError> {
        self.pos = [pos[0].clamp(0.0, 1.0), pos[1].clamp(0.0, 1.0)];
        self.vel = [0.0, 0.0];
        Ok(self.observe())
    }

    fn succeeded(&self) -> bool {
        self.success
    }
}
