//! Value-equivalent model: encoder, dynamics, reward (+ option duration) and
//! value networks, the n-step value targets and the model loss.
//!
//! Abstract states carry the goal vector alongside the learned latent: the
//! encoder sees only the observation, and the goal is appended as context for
//! the dynamics, reward and value networks. State-conditioned affordances can
//! then read the latent without seeing the goal.

use grasp_autodiff::{Activation, BoundMlp, Gradients, Graph, Mlp, Parameterized, Result, Tensor, Var};
use rand::Rng;

use crate::affordance::AffordanceModule;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelDims {
    pub obs_dim: usize,
    pub goal_dim: usize,
    pub action_dim: usize,
    pub state_dim: usize,
    pub hidden: usize,
    /// Option mode: the reward network also predicts option duration.
    pub options: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueEquivalentModel {
    dims: ModelDims,
    encoder: Mlp,
    dynamics: Mlp,
    reward: Mlp,
    value: Mlp,
}

/// Abstract state(s) in a graph: latent rows plus optional goal rows.
#[derive(Clone, Copy, Debug)]
pub struct State {
    pub latent: Var,
    pub goal: Option<Var>,
}

impl State {
    pub fn rows(&self, g: &Graph) -> usize {
        g.shape(self.latent)[0]
    }

    /// `concat(latent, goal)`, or the latent alone when there is no goal.
    pub fn features(&self, g: &mut Graph) -> Result<Var> {
        match self.goal {
            Some(goal) => g.concat(&[self.latent, goal]),
            None => Ok(self.latent),
        }
    }

    pub fn repeat(&self, g: &mut Graph, k: usize) -> Result<State> {
        Ok(State {
            latent: g.repeat_rows(self.latent, k)?,
            goal: self.goal.map(|v| g.repeat_rows(v, k)).transpose()?,
        })
    }

    pub fn row(&self, g: &mut Graph, i: usize) -> Result<State> {
        Ok(State {
            latent: g.slice_rows(self.latent, i, 1)?,
            goal: self.goal.map(|v| g.slice_rows(v, i, 1)).transpose()?,
        })
    }

    pub fn stop_gradient(&self, g: &mut Graph) -> State {
        State {
            latent: g.stop_gradient(self.latent),
            goal: self.goal.map(|v| g.stop_gradient(v)),
        }
    }
}

/// Model predictions for a batch of `(state, action)` rows.
#[derive(Clone, Copy, Debug)]
pub struct Step {
    pub reward: Var,
    /// Predicted option duration (option mode only).
    pub duration: Option<Var>,
    /// Discount applied to the successor value: `gamma^duration`.
    pub discount: Var,
    pub next: State,
}

impl ValueEquivalentModel {
    pub fn new<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Result<Self> {
        let (h, m) = (dims.hidden, dims.state_dim);
        let ctx = m + dims.goal_dim;
        let reward_out = if dims.options { 2 } else { 1 };
        Ok(ValueEquivalentModel {
            dims,
            encoder: Mlp::new("model.encoder", &[dims.obs_dim, h, h, m], Activation::Elu, Activation::Elu, rng)?,
            dynamics: Mlp::new(
                "model.dynamics",
                &[ctx + dims.action_dim, h, h, m],
                Activation::Elu,
                Activation::Elu,
                rng,
            )?,
            reward: Mlp::new(
                "model.reward",
                &[ctx + dims.action_dim, h, h, reward_out],
                Activation::Elu,
                Activation::None,
                rng,
            )?,
            value: Mlp::new("model.value", &[ctx, h, h, 1], Activation::Elu, Activation::None, rng)?,
        })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool, gamma: f64) -> BoundModel {
        BoundModel {
            dims: self.dims,
            gamma,
            encoder: self.encoder.bind(g, trainable),
            dynamics: self.dynamics.bind(g, trainable),
            reward: self.reward.bind(g, trainable),
            value: self.value.bind(g, trainable),
        }
    }

    pub fn store_grads(&mut self, bound: &BoundModel, grads: &Gradients) {
        self.encoder.store_grads(&bound.encoder, grads);
        self.dynamics.store_grads(&bound.dynamics, grads);
        self.reward.store_grads(&bound.reward, grads);
        self.value.store_grads(&bound.value, grads);
    }

    /// Mutable access to the value network, for tests that pin its output.
    pub fn value_net_mut(&mut self) -> &mut Mlp {
        &mut self.value
    }

    pub fn reward_net_mut(&mut self) -> &mut Mlp {
        &mut self.reward
    }
}

impl Parameterized for ValueEquivalentModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.encoder.visit(f);
        self.dynamics.visit(f);
        self.reward.visit(f);
        self.value.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.encoder.visit_mut(f);
        self.dynamics.visit_mut(f);
        self.reward.visit_mut(f);
        self.value.visit_mut(f);
    }
}

/// A [`ValueEquivalentModel`] placed in one graph.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub dims: ModelDims,
    pub gamma: f64,
    encoder: BoundMlp,
    dynamics: BoundMlp,
    reward: BoundMlp,
    value: BoundMlp,
}

impl BoundModel {
    /// Encode observation rows `(B, obs_dim)` with goal rows `(B, goal_dim)`.
    pub fn encode(&self, g: &mut Graph, obs: Var, goal: Option<Var>) -> Result<State> {
        let latent = self.encoder.forward(g, obs)?;
        Ok(State { latent, goal })
    }

    /// Build observation/goal constants from plain rows and encode them.
    pub fn encode_rows(&self, g: &mut Graph, obs: &[&[f64]], goals: &[&[f64]]) -> Result<State> {
        let b = obs.len();
        let flat: Vec<f64> = obs.iter().flat_map(|o| o.iter().copied()).collect();
        let ov = g.constant_from(vec![b, self.dims.obs_dim], flat)?;
        let gv = if self.dims.goal_dim > 0 {
            let flat: Vec<f64> = goals.iter().flat_map(|o| o.iter().copied()).collect();
            Some(g.constant_from(vec![b, self.dims.goal_dim], flat)?)
        } else {
            None
        };
        self.encode(g, ov, gv)
    }

    pub fn value(&self, g: &mut Graph, s: &State) -> Result<Var> {
        let x = s.features(g)?;
        self.value.forward(g, x)
    }

    /// Reward, duration, discount and successor for action rows `(B, action_dim)`.
    pub fn step(&self, g: &mut Graph, s: &State, action: Var) -> Result<Step> {
        let f = s.features(g)?;
        let x = g.concat(&[f, action])?;
        let out = self.reward.forward(g, x)?;
        let latent = self.dynamics.forward(g, x)?;
        let next = State {
            latent,
            goal: s.goal,
        };
        if self.dims.options {
            let reward = g.slice(out, 0, 1)?;
            let raw = g.slice(out, 1, 1)?;
            let duration = g.softplus(raw);
            // gamma^n = exp(n ln gamma), continuous in n
            let scaled = g.scale(duration, self.gamma.ln());
            let discount = g.exp(scaled);
            Ok(Step {
                reward,
                duration: Some(duration),
                discount,
                next,
            })
        } else {
            let rows = g.shape(out)[0];
            let discount = g.constant_from(vec![rows, 1], vec![self.gamma; rows])?;
            Ok(Step {
                reward: out,
                duration: None,
                discount,
                next,
            })
        }
    }

    /// `Q(s, a) = r(s, a) + gamma^n V(f(s, a))` for every row.
    pub fn q_value(&self, g: &mut Graph, s: &State, action: Var) -> Result<Var> {
        let st = self.step(g, s, action)?;
        let v = self.value(g, &st.next)?;
        let dv = g.mul(st.discount, v)?;
        g.add(st.reward, dv)
    }
}

/// Unrolled model predictions for one sequence of actions.
#[derive(Clone, Debug)]
pub struct Unroll {
    /// `s_1 .. s_{n+1}`
    pub states: Vec<State>,
    /// `r_1 .. r_n`
    pub rewards: Vec<Var>,
    /// `v_1 .. v_{n+1}`
    pub values: Vec<Var>,
    /// `n_1 .. n_n` (option mode)
    pub durations: Vec<Var>,
}

/// Chain `s_{i+1} = f(s_i, a_i)` from `s_1` over action rows.
pub fn unroll(g: &mut Graph, model: &BoundModel, s1: State, actions: &[Var]) -> Result<Unroll> {
    let mut out = Unroll {
        states: vec![s1],
        rewards: Vec::new(),
        values: vec![model.value(g, &s1)?],
        durations: Vec::new(),
    };
    let mut s = s1;
    for &a in actions {
        let st = model.step(g, &s, a)?;
        out.rewards.push(st.reward);
        if let Some(d) = st.duration {
            out.durations.push(d);
        }
        s = st.next;
        out.states.push(s);
        out.values.push(model.value(g, &s)?);
    }
    Ok(out)
}

/// A window of consecutive transitions from a single episode.
///
/// `observations` has one more entry than the per-transition vectors. A
/// terminal flag ends the window.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSegment {
    pub observations: Vec<Vec<f64>>,
    pub goal: Vec<f64>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub durations: Vec<usize>,
    pub terminal: Vec<bool>,
}

impl EpisodeSegment {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Index of the first terminal transition, if any.
    pub fn first_terminal(&self) -> Option<usize> {
        self.terminal.iter().position(|&t| t)
    }

    /// Whether the last observation is bootstrapped from.
    pub fn bootstraps(&self) -> bool {
        self.first_terminal().is_none()
    }

    pub fn final_observation(&self) -> &[f64] {
        &self.observations[self.len()]
    }
}

/// Discounted returns for every position of a segment:
/// `v_j = sum_k gamma^{D(j,k)} r_k + gamma^{D(j,end)} bootstrap`, where
/// `D` accumulates observed durations. Rewards and bootstrap stop at the first
/// terminal transition; positions after it are absorbing (target 0).
pub fn discounted_targets(seg: &EpisodeSegment, bootstrap: f64, gamma: f64) -> Vec<f64> {
    let n = seg.len();
    let end = seg.first_terminal().map(|t| t + 1).unwrap_or(n);
    let boot = if seg.bootstraps() { bootstrap } else { 0.0 };
    let mut targets = vec![0.0; n];
    // backward accumulation: G_j = r_j + gamma^{n_j} G_{j+1}
    let mut acc = boot;
    for j in (0..end).rev() {
        acc = seg.rewards[j] + gamma.powi(seg.durations[j] as i32) * acc;
        targets[j] = acc;
    }
    targets
}

/// Frozen copy of the model and affordances used for bootstrapped targets.
#[derive(Clone, Debug)]
pub struct TargetModel {
    pub model: ValueEquivalentModel,
    pub afford: AffordanceModule,
    /// Learner updates since the last sync.
    pub updates_since_sync: u64,
    pub syncs: u64,
}

impl TargetModel {
    pub fn new(model: &ValueEquivalentModel, afford: &AffordanceModule) -> Self {
        TargetModel {
            model: model.clone(),
            afford: afford.clone(),
            updates_since_sync: 0,
            syncs: 0,
        }
    }

    /// Hard copy of all online parameters.
    pub fn sync(&mut self, model: &ValueEquivalentModel, afford: &AffordanceModule) {
        self.model.copy_from(model);
        self.afford.copy_params_from(afford);
        self.updates_since_sync = 0;
        self.syncs += 1;
    }

    /// Count one learner update; hard-sync when the period elapses. Returns
    /// whether a sync happened.
    pub fn tick(&mut self, period: u64, model: &ValueEquivalentModel, afford: &AffordanceModule) -> bool {
        self.updates_since_sync += 1;
        if self.updates_since_sync >= period {
            self.sync(model, afford);
            true
        } else {
            false
        }
    }

    /// `max_b Q_target(enc(x), b)` over the target affordance outputs, per row.
    pub fn max_q(&self, obs: &[&[f64]], goals: &[&[f64]], gamma: f64) -> Result<Vec<f64>> {
        if obs.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let m = self.model.bind(&mut g, false, gamma);
        let a = self.afford.bind(&mut g, false);
        let s = m.encode_rows(&mut g, obs, goals)?;
        let actions = a.afford(&mut g, &s)?;
        let k = self.afford.k();
        let rep = s.repeat(&mut g, k)?;
        let q = m.q_value(&mut g, &rep, actions)?;
        let qv = g.value(q);
        Ok(qv
            .chunks(k)
            .map(|c| c.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect())
    }

    /// Value targets for every segment in a batch.
    pub fn value_targets(&self, segments: &[EpisodeSegment], gamma: f64) -> Result<Vec<Vec<f64>>> {
        let need: Vec<usize> = (0..segments.len())
            .filter(|&i| segments[i].bootstraps())
            .collect();
        let obs: Vec<&[f64]> = need.iter().map(|&i| segments[i].final_observation()).collect();
        let goals: Vec<&[f64]> = need.iter().map(|&i| segments[i].goal.as_slice()).collect();
        let boots = self.max_q(&obs, &goals, gamma)?;
        let mut boot_of = vec![0.0; segments.len()];
        for (&i, b) in need.iter().zip(boots) {
            boot_of[i] = b;
        }
        Ok(segments
            .iter()
            .zip(boot_of)
            .map(|(s, b)| discounted_targets(s, b, gamma))
            .collect())
    }
}

/// Scalar components of one model-loss evaluation (batch means).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub reward: f64,
    pub value: f64,
    pub duration: f64,
}

/// Model loss over a batch of segments padded to `unroll_len`.
///
/// Per segment: `sum_i (r_i - r^_i)^2 + (v_i - V(s_i))^2 [+ (n_i - n^_i)^2]`,
/// averaged over the batch. After a terminal transition the unroll continues
/// with zero actions and is trained towards zero reward and value. Returns the
/// loss node and its parts; targets enter as constants.
pub fn model_loss(
    g: &mut Graph,
    model: &BoundModel,
    segments: &[EpisodeSegment],
    targets: &[Vec<f64>],
    unroll_len: usize,
) -> Result<(Var, LossParts)> {
    model_loss_weighted(g, model, segments, targets, unroll_len, 1.0)
}

/// [`model_loss`] with the duration term scaled by `duration_weight`. The
/// reported parts stay unweighted.
pub fn model_loss_weighted(
    g: &mut Graph,
    model: &BoundModel,
    segments: &[EpisodeSegment],
    targets: &[Vec<f64>],
    unroll_len: usize,
    duration_weight: f64,
) -> Result<(Var, LossParts)> {
    let b = segments.len();
    let dims = model.dims;
    assert_eq!(targets.len(), b);
    let first: Vec<&[f64]> = segments.iter().map(|s| s.observations[0].as_slice()).collect();
    let goals: Vec<&[f64]> = segments.iter().map(|s| s.goal.as_slice()).collect();
    let s1 = model.encode_rows(g, &first, &goals)?;

    let col = |g: &mut Graph, v: Vec<f64>| g.constant_from(vec![b, 1], v);
    let mut actions = Vec::with_capacity(unroll_len);
    let mut r_t = Vec::new();
    let mut v_t = Vec::new();
    let mut d_t = Vec::new();
    let mut mask_rv = Vec::new();
    let mut mask_d = Vec::new();
    for i in 0..unroll_len {
        let mut a = Vec::with_capacity(b * dims.action_dim);
        let (mut rr, mut vv, mut dd, mut mrv, mut md) = (vec![], vec![], vec![], vec![], vec![]);
        for (seg, tg) in segments.iter().zip(targets) {
            let live = i < seg.len();
            // only absorbing padding may follow the real transitions
            let padded_ok = seg.first_terminal().is_some() || live;
            if live {
                a.extend_from_slice(&seg.actions[i]);
                rr.push(seg.rewards[i]);
                vv.push(tg[i]);
                dd.push(seg.durations[i] as f64);
                md.push(1.0);
            } else {
                a.extend(std::iter::repeat(0.0).take(dims.action_dim));
                rr.push(0.0);
                vv.push(0.0);
                dd.push(1.0);
                md.push(0.0);
            }
            mrv.push(if padded_ok { 1.0 } else { 0.0 });
        }
        actions.push(g.constant_from(vec![b, dims.action_dim], a)?);
        r_t.push(col(g, rr)?);
        v_t.push(col(g, vv)?);
        d_t.push(col(g, dd)?);
        mask_rv.push(col(g, mrv)?);
        mask_d.push(col(g, md)?);
    }

    let un = unroll(g, model, s1, &actions)?;
    let mut reward_terms = Vec::new();
    let mut value_terms = Vec::new();
    let mut duration_terms = Vec::new();
    for i in 0..unroll_len {
        let e = g.sub(r_t[i], un.rewards[i])?;
        let e2 = g.square(e);
        reward_terms.push(g.mul(e2, mask_rv[i])?);
        let e = g.sub(v_t[i], un.values[i])?;
        let e2 = g.square(e);
        value_terms.push(g.mul(e2, mask_rv[i])?);
        if dims.options {
            let e = g.sub(d_t[i], un.durations[i])?;
            let e2 = g.square(e);
            duration_terms.push(g.mul(e2, mask_d[i])?);
        }
    }
    let scale = 1.0 / b.max(1) as f64;
    let reduce = |g: &mut Graph, terms: &[Var]| -> Result<Option<Var>> {
        if terms.is_empty() {
            return Ok(None);
        }
        let c = g.concat(terms)?;
        let s = g.sum(c);
        Ok(Some(g.scale(s, scale)))
    };
    let rl = reduce(g, &reward_terms)?.expect("unroll_len >= 1");
    let vl = reduce(g, &value_terms)?.expect("unroll_len >= 1");
    let dl = reduce(g, &duration_terms)?;
    let mut total = g.add(rl, vl)?;
    if let Some(d) = dl {
        let d = if duration_weight == 1.0 { d } else { g.scale(d, duration_weight) };
        total = g.add(total, d)?;
    }
    let parts = LossParts {
        total: g.item(rl) + g.item(vl) + dl.map(|d| g.item(d)).unwrap_or(0.0),
        reward: g.item(rl),
        value: g.item(vl),
        duration: dl.map(|d| g.item(d)).unwrap_or(0.0),
    };
    Ok((total, parts))
}
