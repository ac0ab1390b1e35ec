use rand::{Rng, RngCore};

use super::{
    check_dim, one_hot, to_box, EnvError, EnvKind, EnvSpec, Environment, Observation, StepOutcome,
    TracePoint, PERMUTATIONS,
};

/// `[agent x, y, A x, y, B x, y, C x, y, collected A, B, C]`
pub const COLLECT_OBS_DIM: usize = 11;

/// Continuous 2-D world with three objects to collect in a goal-given order.
///
/// Primitive moves are axis-aligned steps of size `eps`; the agent chooses a
/// navigate-and-collect option by target position.
#[derive(Clone, Debug)]
pub struct CollectWorld {
    pub eps: f64,
    pub gamma: f64,
    pub max_options: usize,
    agent: [f64; 2],
    objects: [[f64; 2]; 3],
    collected: [bool; 3],
    goal: usize,
    progress: usize,
    options_taken: usize,
    over: bool,
    success: bool,
}

impl CollectWorld {
    pub fn new(gamma: f64) -> Self {
        CollectWorld {
            eps: 0.05,
            gamma,
            max_options: 100,
            agent: [0.5, 0.5],
            objects: [[0.2, 0.2], [0.8, 0.2], [0.5, 0.8]],
            collected: [false; 3],
            goal: 0,
            progress: 0,
            options_taken: 0,
            over: false,
            success: false,
        }
    }

    /// Start a fresh episode from an explicit layout.
    pub fn set_layout(&mut self, agent: [f64; 2], objects: [[f64; 2]; 3], goal: usize) -> Observation {
        assert!(goal < PERMUTATIONS.len());
        self.agent = agent;
        self.objects = objects;
        self.collected = [false; 3];
        self.goal = goal;
        self.progress = 0;
        self.options_taken = 0;
        self.over = false;
        self.success = false;
        self.observe()
    }

    pub fn objects(&self) -> [[f64; 2]; 3] {
        self.objects
    }

    pub fn goal_order(&self) -> [usize; 3] {
        PERMUTATIONS[self.goal]
    }

    /// Upper bound on primitive steps in one option.
    pub fn option_step_bound(&self) -> usize {
        (2.0 / self.eps).ceil() as usize + 1
    }

    fn move_once(&mut self, target: [f64; 2]) -> bool {
        let dx = target[0] - self.agent[0];
        let dy = target[1] - self.agent[1];
        let half = self.eps / 2.0;
        if dx.abs() <= half && dy.abs() <= half {
            return false;
        }
        // larger gap first; ties go to x
        if dx.abs() >= dy.abs() {
            self.agent[0] = (self.agent[0] + self.eps * dx.signum()).clamp(0.0, 1.0);
        } else {
            self.agent[1] = (self.agent[1] + self.eps * dy.signum()).clamp(0.0, 1.0);
        }
        true
    }

    /// Nearest uncollected object within `eps`, if any.
    fn object_in_reach(&self) -> Option<usize> {
        (0..3)
            .filter(|&i| !self.collected[i])
            .map(|i| {
                let d = dist(self.agent, self.objects[i]);
                (i, d)
            })
            .filter(|&(_, d)| d <= self.eps)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl Environment for CollectWorld {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            kind: EnvKind::Collect,
            obs_dim: COLLECT_OBS_DIM,
            goal_dim: 6,
            action_dim: 2,
            options: true,
        }
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> Observation {
        let mut p = || [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
        let agent = p();
        // objects closer than 2*eps could be collected in place of each other
        let objects = loop {
            let o = [p(), p(), p()];
            let apart = (0..3).all(|i| (i + 1..3).all(|j| dist(o[i], o[j]) > 2.0 * self.eps));
            if apart {
                break o;
            }
        };
        let goal = rng.gen_range(0..PERMUTATIONS.len());
        self.set_layout(agent, objects, goal)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        check_dim(action, 2)?;
        if self.over {
            return Err(EnvError::EpisodeOver);
        }
        let target = [to_box(action[0], 0.0, 1.0), to_box(action[1], 0.0, 1.0)];
        let mut trace = Vec::new();
        let mut steps = 0;
        while self.move_once(target) {
            steps += 1;
            trace.push(self.agent());
        }
        // the collect primitive
        steps += 1;
        trace.push(self.agent());
        let mut raw = 0.0;
        let mut terminal = false;
        let mut event = "collect_none";
        if let Some(obj) = self.object_in_reach() {
            let order = self.goal_order();
            if obj == order[self.progress] {
                self.collected[obj] = true;
                self.progress += 1;
                event = "collect_ok";
                if self.progress == 3 {
                    raw = 1.0;
                    terminal = true;
                    self.success = true;
                    event = "success";
                }
            } else {
                terminal = true;
                event = "wrong_order";
            }
        }
        self.options_taken += 1;
        let truncated = !terminal && self.options_taken >= self.max_options;
        self.over = terminal || truncated;
        Ok(StepOutcome {
            reward: raw * self.gamma.powi(steps as i32 - 1),
            raw_reward: raw,
            duration: steps,
            observation: self.observe(),
            terminal,
            truncated,
            trace,
            event,
        })
    }

    fn observe(&self) -> Observation {
        let mut obs = Vec::with_capacity(COLLECT_OBS_DIM);
        obs.extend_from_slice(&self.agent);
        for o in &self.objects {
            obs.extend_from_slice(o);
        }
        obs.extend(self.collected.iter().map(|&c| if c { 1.0 } else { 0.0 }));
        Observation {
            obs,
            goal: one_hot(self.goal, 6),
        }
    }

    fn agent(&self) -> TracePoint {
        TracePoint {
            pos: self.agent,
            vel: None,
        }
    }

    fn landmarks(&self) -> Vec<[f64; 2]> {
        self.objects.to_vec()
    }

    fn place_agent(&mut self, pos: [f64; 2]) -> Result<Observation, EnvError> {
        self.agent = [pos[0].clamp(0.0, 1.0), pos[1].clamp(0.0, 1.0)];
        Ok(self.observe())
    }

    fn succeeded(&self) -> bool {
        self.success
    }
}
