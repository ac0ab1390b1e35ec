//! Affordance module: K heads mapping an abstract state to K actions in
//! `[-1, 1]^d`.

use std::fmt;
use std::str::FromStr;

use grasp_autodiff::{Activation, AutodiffError, BoundMlp, Gradients, Graph, Linear, Mlp, Parameterized, Result, Tensor, Var};
use rand::Rng;

use crate::model::State;

/// What the heads condition on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Latent state and goal (`GA`).
    GoalConditioned,
    /// Latent state only (`SA`).
    StateConditioned,
    /// Unconditioned free vectors (`A`).
    Unconditioned,
}

impl Variant {
    pub fn tag(self) -> &'static str {
        match self {
            Variant::GoalConditioned => "GA",
            Variant::StateConditioned => "SA",
            Variant::Unconditioned => "A",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "GA" | "ga" => Ok(Variant::GoalConditioned),
            "SA" | "sa" => Ok(Variant::StateConditioned),
            "A" | "a" => Ok(Variant::Unconditioned),
            other => Err(format!("unknown affordance variant `{other}` (expected GA, SA or A)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Body {
    /// Shared trunk, then one linear layer holding every head's outputs.
    Network { trunk: Mlp, heads: Mlp },
    /// `(1, K*d)` free parameters.
    Free(Tensor),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffordanceModule {
    variant: Variant,
    k: usize,
    action_dim: usize,
    /// Parameters never updated (random-affordance baseline).
    frozen: bool,
    body: Body,
}

impl AffordanceModule {
    /// `state_dim`/`goal_dim` describe the abstract state; `hidden` is the
    /// trunk width.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        variant: Variant,
        k: usize,
        state_dim: usize,
        goal_dim: usize,
        action_dim: usize,
        hidden: usize,
        frozen: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if k == 0 {
            return Err(AutodiffError::Shape {
                op: "affordance",
                detail: "K must be at least 1".into(),
            });
        }
        let body = match variant {
            Variant::Unconditioned => {
                let init = Linear::new(1, k * action_dim, rng).weight;
                Body::Free(Tensor::new(vec![1, k * action_dim], init.into_data())?)
            }
            _ => {
                let input = match variant {
                    Variant::GoalConditioned => state_dim + goal_dim,
                    _ => state_dim,
                };
                let trunk = Mlp::new("afford.trunk", &[input, hidden, hidden], Activation::Elu, Activation::Elu, rng)?;
                let mut heads = Mlp::new("afford.heads", &[hidden, k * action_dim], Activation::None, Activation::Tanh, rng)?;
                // spread the heads over the action box instead of starting them all at its centre
                if let Some(out) = heads.layers_mut().last_mut() {
                    for b in out.bias.data_mut() {
                        *b = rng.gen_range(-1.0..=1.0);
                    }
                }
                Body::Network { trunk, heads }
            }
        };
        Ok(AffordanceModule {
            variant,
            k,
            action_dim,
            frozen,
            body,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    /// Copy parameters only; the frozen flag stays as it is.
    pub fn copy_params_from(&mut self, other: &AffordanceModule) {
        self.copy_from(other);
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundAffordance {
        let trainable = trainable && !self.frozen;
        let body = match &self.body {
            Body::Network { trunk, heads } => BoundBody::Network {
                trunk: trunk.bind(g, trainable),
                heads: heads.bind(g, trainable),
            },
            Body::Free(t) => BoundBody::Free(if trainable { g.leaf(t) } else { g.constant(t) }),
        };
        BoundAffordance {
            variant: self.variant,
            k: self.k,
            action_dim: self.action_dim,
            body,
        }
    }

    pub fn store_grads(&mut self, bound: &BoundAffordance, grads: &Gradients) {
        match (&mut self.body, &bound.body) {
            (Body::Network { trunk, heads }, BoundBody::Network { trunk: bt, heads: bh }) => {
                trunk.store_grads(bt, grads);
                heads.store_grads(bh, grads);
            }
            (Body::Free(t), BoundBody::Free(v)) => {
                t.set_grad(grads.wrt(*v)).expect("gradient matches parameter shape");
            }
            _ => unreachable!("bound affordance does not match module"),
        }
    }

    /// Plain evaluation for one abstract state given as feature rows.
    pub fn actions_for(&self, latent: &[f64], goal: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, false);
        let l = g.constant_from(vec![1, latent.len()], latent.to_vec())?;
        let gv = if goal.is_empty() {
            None
        } else {
            Some(g.constant_from(vec![1, goal.len()], goal.to_vec())?)
        };
        let a = b.afford(&mut g, &State { latent: l, goal: gv })?;
        Ok(g.value(a).chunks(self.action_dim).map(|c| c.to_vec()).collect())
    }
}

impl Parameterized for AffordanceModule {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        match &self.body {
            Body::Network { trunk, heads } => {
                trunk.visit(f);
                heads.visit(f);
            }
            Body::Free(t) => f("afford.free", t),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        match &mut self.body {
            Body::Network { trunk, heads } => {
                trunk.visit_mut(f);
                heads.visit_mut(f);
            }
            Body::Free(t) => f("afford.free", t),
        }
    }
}

#[derive(Clone, Debug)]
enum BoundBody {
    Network { trunk: BoundMlp, heads: BoundMlp },
    Free(Var),
}

#[derive(Clone, Debug)]
pub struct BoundAffordance {
    variant: Variant,
    k: usize,
    action_dim: usize,
    body: BoundBody,
}

impl BoundAffordance {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Actions for `N` states as `(N*K, d)`: rows `i*K .. i*K+K` belong to
    /// state `i`, in head order.
    pub fn afford(&self, g: &mut Graph, s: &State) -> Result<Var> {
        let n = s.rows(g);
        let flat = match &self.body {
            BoundBody::Network { trunk, heads } => {
                let x = match self.variant {
                    Variant::GoalConditioned => s.features(g)?,
                    _ => s.latent,
                };
                let h = trunk.forward(g, x)?;
                heads.forward(g, h)?
            }
            BoundBody::Free(p) => {
                // broadcast the free row to N rows through a ones column
                let ones = g.constant_from(vec![n, 1], vec![1.0; n])?;
                let rows = g.matmul(ones, *p)?;
                g.tanh(rows)
            }
        };
        g.reshape(flat, vec![n * self.k, self.action_dim])
    }
}
