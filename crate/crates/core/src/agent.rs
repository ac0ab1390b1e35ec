//! Agent: the model, the affordance module and the planner settings needed to
//! act from an observation.

use std::path::Path;

use grasp_autodiff::{checkpoint, Graph, Parameterized, Tensor};
use rand::RngCore;

use crate::affordance::{AffordanceModule, Variant};
use crate::env::{EnvSpec, Observation};
use crate::model::{ModelDims, ValueEquivalentModel};
use crate::planner::{plan_batch, Plan, PlannerConfig};
use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub state_dim: usize,
    pub hidden: usize,
    pub variant: Variant,
    pub k: usize,
    pub afford_hidden: usize,
    /// Affordances stay at their random initialization.
    pub frozen: bool,
    pub planner: PlannerConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            state_dim: 64,
            hidden: 512,
            variant: Variant::GoalConditioned,
            k: 4,
            afford_hidden: 512,
            frozen: false,
            planner: PlannerConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Agent {
    pub cfg: AgentConfig,
    pub spec: EnvSpec,
    pub model: ValueEquivalentModel,
    pub afford: AffordanceModule,
}

impl Agent {
    pub fn new(spec: EnvSpec, cfg: AgentConfig, rng: &mut dyn RngCore) -> Result<Self> {
        let dims = ModelDims {
            obs_dim: spec.obs_dim,
            goal_dim: spec.goal_dim,
            action_dim: spec.action_dim,
            state_dim: cfg.state_dim,
            hidden: cfg.hidden,
            options: spec.options,
        };
        let model = ValueEquivalentModel::new(dims, rng)?;
        let afford = AffordanceModule::new(
            cfg.variant,
            cfg.k,
            cfg.state_dim,
            spec.goal_dim,
            spec.action_dim,
            cfg.afford_hidden,
            cfg.frozen,
            rng,
        )?;
        Ok(Agent {
            cfg,
            spec,
            model,
            afford,
        })
    }

    /// Plan from one observation with frozen parameters.
    pub fn plan(&self, obs: &Observation, rng: &mut dyn RngCore) -> Result<Plan> {
        let mut g = Graph::new();
        let m = self.model.bind(&mut g, false, self.cfg.gamma);
        let a = self.afford.bind(&mut g, false);
        let s = m.encode_rows(&mut g, &[&obs.obs], &[&obs.goal])?;
        let mut batch = plan_batch(&mut g, &m, &a, s, &self.cfg.planner, rng)?;
        Ok(batch.plans.swap_remove(0))
    }

    /// Plan, then pick a head greedily or by sampling the root policy.
    pub fn act(&self, obs: &Observation, greedy: bool, rng: &mut dyn RngCore) -> Result<(usize, Plan)> {
        let plan = self.plan(obs, rng)?;
        let head = if greedy { plan.greedy() } else { plan.sample(rng) };
        Ok((head, plan))
    }

    /// Affordance actions at one observation, without planning.
    pub fn head_actions(&self, obs: &Observation) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let m = self.model.bind(&mut g, false, self.cfg.gamma);
        let a = self.afford.bind(&mut g, false);
        let s = m.encode_rows(&mut g, &[&obs.obs], &[&obs.goal])?;
        let acts = a.afford(&mut g, &s)?;
        let d = self.spec.action_dim;
        Ok(g.value(acts).chunks(d).map(|c| c.to_vec()).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(self, path)?;
        Ok(())
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        checkpoint::load_into(self, path)?;
        Ok(())
    }
}

impl Parameterized for Agent {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.model.visit(f);
        self.afford.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.model.visit_mut(f);
        self.afford.visit_mut(f);
    }
}
