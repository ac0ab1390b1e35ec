//! Finite-difference checks of every primitive op, every network and the
//! planner objective.

use grasp_autodiff::check::{check_op, primitive_kinds, FD_STEP, REL_FLOOR};
use grasp_autodiff::fd::max_relative_error;
use grasp_autodiff::{Graph, Parameterized};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::affordance::{AffordanceModule, Variant};
use crate::model::{model_loss, EpisodeSegment, ModelDims, ValueEquivalentModel};
use crate::planner::{plan_batch, PlanMode, PlannerConfig};
use crate::Result;

pub const OP_TOLERANCE: f64 = 1e-4;
pub const PLANNER_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn flat_params<P: Parameterized + ?Sized>(p: &P) -> Vec<f64> {
    let mut v = Vec::new();
    p.visit(&mut |_, t| v.extend_from_slice(t.data()));
    v
}

fn flat_grads<P: Parameterized + ?Sized>(p: &P) -> Vec<f64> {
    let mut v = Vec::new();
    p.visit(&mut |_, t| match t.grad() {
        Some(g) => v.extend_from_slice(g),
        None => v.extend(std::iter::repeat(0.0).take(t.numel())),
    });
    v
}

fn set_flat<P: Parameterized + ?Sized>(p: &mut P, x: &[f64]) {
    let mut i = 0;
    p.visit_mut(&mut |_, t| {
        let n = t.numel();
        t.data_mut().copy_from_slice(&x[i..i + n]);
        i += n;
    });
}

/// Central differences of `f` over every parameter of `p`.
pub fn numeric_param_grad<P: Parameterized + Clone>(p: &P, f: impl Fn(&P) -> f64) -> Vec<f64> {
    let x0 = flat_params(p);
    let mut q = p.clone();
    let mut out = Vec::with_capacity(x0.len());
    let mut x = x0.clone();
    for i in 0..x0.len() {
        x[i] = x0[i] + FD_STEP;
        set_flat(&mut q, &x);
        let hi = f(&q);
        x[i] = x0[i] - FD_STEP;
        set_flat(&mut q, &x);
        let lo = f(&q);
        x[i] = x0[i];
        out.push((hi - lo) / (2.0 * FD_STEP));
    }
    out
}

fn random_segment<R: Rng>(dims: &ModelDims, len: usize, rng: &mut R) -> EpisodeSegment {
    let mut v = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    EpisodeSegment {
        observations: (0..=len).map(|_| v(dims.obs_dim)).collect(),
        goal: v(dims.goal_dim),
        actions: (0..len).map(|_| v(dims.action_dim)).collect(),
        rewards: v(len),
        durations: (0..len).map(|i| 1 + i % 3).collect(),
        terminal: vec![false; len],
    }
}

fn tiny_dims(options: bool) -> ModelDims {
    ModelDims {
        obs_dim: 3,
        goal_dim: 2,
        action_dim: 2,
        state_dim: 3,
        hidden: 5,
        options,
    }
}

/// Model loss gradient with respect to every model parameter.
pub fn check_model_loss(options: bool, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = tiny_dims(options);
    let mut model = ValueEquivalentModel::new(dims, &mut rng)?;
    let segs: Vec<EpisodeSegment> = (0..2).map(|_| random_segment(&dims, 3, &mut rng)).collect();
    let targets: Vec<Vec<f64>> = (0..2).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let loss_of = |m: &ValueEquivalentModel| -> f64 {
        let mut g = Graph::new();
        let b = m.bind(&mut g, false, 0.9);
        let (l, _) = model_loss(&mut g, &b, &segs, &targets, 3).expect("loss");
        g.item(l)
    };
    let mut g = Graph::new();
    let b = model.bind(&mut g, true, 0.9);
    let (l, _) = model_loss(&mut g, &b, &segs, &targets, 3)?;
    let grads = g.backward(l)?;
    model.zero_grads();
    model.store_grads(&b, &grads);
    let analytic = flat_grads(&model);
    let numeric = numeric_param_grad(&model, loss_of);
    Ok(max_relative_error(&analytic, &numeric, REL_FLOOR))
}

/// Affordance network output (random read-out) with respect to its
/// parameters.
pub fn check_affordance_net(variant: Variant, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut af = AffordanceModule::new(variant, 3, 3, 2, 2, 5, false, &mut rng)?;
    let latent: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let goal: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let build = |g: &mut Graph, a: &AffordanceModule, trainable: bool| {
        let b = a.bind(g, trainable);
        let l = g.constant_from(vec![2, 3], latent.clone()).expect("shape");
        let gv = g.constant_from(vec![2, 2], goal.clone()).expect("shape");
        let out = b
            .afford(g, &crate::model::State { latent: l, goal: Some(gv) })
            .expect("afford");
        let wv = g.constant_from(vec![6, 2], w.clone()).expect("shape");
        let p = g.mul(out, wv).expect("mul");
        (b, g.sum(p))
    };
    let mut g = Graph::new();
    let (b, y) = build(&mut g, &af, true);
    let grads = g.backward(y)?;
    af.zero_grads();
    af.store_grads(&b, &grads);
    let analytic = flat_grads(&af);
    let numeric = numeric_param_grad(&af, |a| {
        let mut g = Graph::new();
        let (_, y) = build(&mut g, a, false);
        g.item(y)
    });
    Ok(max_relative_error(&analytic, &numeric, REL_FLOOR))
}

/// Summed planned root value (softmax backup) with respect to the affordance
/// parameters, with the model held fixed.
pub fn check_planner(k: usize, depth: usize, options: bool, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = tiny_dims(options);
    let model = ValueEquivalentModel::new(dims, &mut rng)?;
    let mut af = AffordanceModule::new(Variant::GoalConditioned, k, 3, 2, 2, 5, false, &mut rng)?;
    let obs: Vec<Vec<f64>> = (0..2).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let goals: Vec<Vec<f64>> = (0..2).map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let cfg = PlannerConfig {
        mode: PlanMode::Complete,
        depth,
        ..PlannerConfig::default()
    };
    let objective = |g: &mut Graph, a: &AffordanceModule, trainable: bool| {
        let bm = model.bind(g, false, 0.9);
        let ba = a.bind(g, trainable);
        let o: Vec<&[f64]> = obs.iter().map(|v| v.as_slice()).collect();
        let gl: Vec<&[f64]> = goals.iter().map(|v| v.as_slice()).collect();
        let s = bm.encode_rows(g, &o, &gl).expect("encode");
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let obj = plan_batch(g, &bm, &ba, s, &cfg, &mut r).expect("plan").objective;
        (ba, obj)
    };
    let mut g = Graph::new();
    let (ba, obj) = objective(&mut g, &af, true);
    let grads = g.backward(obj)?;
    af.zero_grads();
    af.store_grads(&ba, &grads);
    let analytic = flat_grads(&af);
    let numeric = numeric_param_grad(&af, |a| {
        let mut g = Graph::new();
        let (_, obj) = objective(&mut g, a, false);
        g.item(obj)
    });
    Ok(max_relative_error(&analytic, &numeric, REL_FLOOR))
}

/// The whole suite; `seeds` random instances per primitive op.
pub fn run_suite(seeds: u64) -> Result<Vec<CheckEntry>> {
    let mut out = Vec::new();
    for kind in primitive_kinds() {
        let mut worst: f64 = 0.0;
        for s in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            worst = worst.max(check_op(&kind, &mut rng));
        }
        out.push(CheckEntry {
            name: format!("op {kind:?}"),
            max_rel_error: worst,
            tolerance: OP_TOLERANCE,
        });
    }
    for options in [false, true] {
        out.push(CheckEntry {
            name: format!("model loss (options={options})"),
            max_rel_error: check_model_loss(options, 1)?,
            tolerance: OP_TOLERANCE,
        });
    }
    for v in [Variant::GoalConditioned, Variant::StateConditioned, Variant::Unconditioned] {
        out.push(CheckEntry {
            name: format!("affordance net {v}"),
            max_rel_error: check_affordance_net(v, 2)?,
            tolerance: OP_TOLERANCE,
        });
    }
    for options in [false, true] {
        for k in 1..=3 {
            for depth in 1..=2 {
                out.push(CheckEntry {
                    name: format!("planner K={k} D={depth} options={options}"),
                    max_rel_error: check_planner(k, depth, options, 3 + k as u64)?,
                    tolerance: PLANNER_TOLERANCE,
                });
            }
        }
    }
    Ok(out)
}
