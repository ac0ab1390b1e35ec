//! Tree planning over affordance actions with a differentiable backup.
//!
//! Two expansion strategies share one tree type: complete K-ary trees built
//! level by level in batches, and UCT with a fixed number of trajectories.
//! Every tree quantity is a graph node so the root value can be
//! differentiated with respect to the affordance parameters.

use grasp_autodiff::{Graph, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::RngCore;

use crate::affordance::BoundAffordance;
use crate::model::{BoundModel, State};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlanMode {
    Complete,
    Uct,
}

impl std::str::FromStr for PlanMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "complete" => Ok(PlanMode::Complete),
            "uct" => Ok(PlanMode::Uct),
            other => Err(format!("unknown plan mode `{other}` (expected complete or uct)")),
        }
    }
}

impl PlanMode {
    pub fn name(self) -> &'static str {
        match self {
            PlanMode::Complete => "complete",
            PlanMode::Uct => "uct",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannerConfig {
    pub mode: PlanMode,
    pub depth: usize,
    pub tau: f64,
    pub uct_trajectories: usize,
    pub c1: f64,
    pub c2: f64,
    pub node_budget: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            mode: PlanMode::Complete,
            depth: 2,
            tau: 1.0,
            uct_trajectories: 20,
            c1: 1.25,
            c2: 19652.0,
            node_budget: 4096,
        }
    }
}

/// How a node's value aggregates its children's Q-values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Backup {
    /// `pi = softmax(Q / tau)`
    Softmax(f64),
    /// `pi` proportional to edge visit counts, held constant.
    Visits,
}

#[derive(Clone, Debug)]
pub struct Node {
    pub depth: usize,
    /// Abstract state rows and this node's row within them.
    pub state: Option<(State, usize)>,
    /// Affordance outputs and the first row belonging to this node.
    pub actions: Option<(Var, usize)>,
    /// Edge index per head.
    pub children: Vec<Option<usize>>,
    pub leaf_value: Option<Var>,
    pub visits: u32,
}

#[derive(Clone, Debug)]
pub struct Edge {
    pub parent: usize,
    pub head: usize,
    pub child: usize,
    pub reward: Var,
    pub discount: Var,
    pub visits: u32,
    pub value_sum: f64,
}

/// Tree with node 0 as root. Children always have larger indices than their
/// parents.
#[derive(Clone, Debug)]
pub struct PlanTree {
    pub k: usize,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl PlanTree {
    pub fn new(k: usize) -> Self {
        PlanTree {
            k,
            nodes: vec![Node {
                depth: 0,
                state: None,
                actions: None,
                children: vec![None; k],
                leaf_value: None,
                visits: 0,
            }],
            edges: Vec::new(),
        }
    }

    pub fn add_child(&mut self, parent: usize, head: usize, reward: Var, discount: Var) -> Result<usize> {
        if head >= self.k || parent >= self.nodes.len() {
            return Err(Error::Tree(format!("no head {head} at node {parent}")));
        }
        if self.nodes[parent].children[head].is_some() {
            return Err(Error::Tree(format!("head {head} of node {parent} already expanded")));
        }
        let child = self.nodes.len();
        self.nodes.push(Node {
            depth: self.nodes[parent].depth + 1,
            state: None,
            actions: None,
            children: vec![None; self.k],
            leaf_value: None,
            visits: 0,
        });
        self.nodes[parent].children[head] = Some(self.edges.len());
        self.edges.push(Edge {
            parent,
            head,
            child,
            reward,
            discount,
            visits: 0,
            value_sum: 0.0,
        });
        Ok(child)
    }

    pub fn set_leaf_value(&mut self, node: usize, v: Var) {
        self.nodes[node].leaf_value = Some(v);
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Edges leaving `node`, in head order.
    pub fn out_edges(&self, node: usize) -> impl Iterator<Item = &Edge> + '_ {
        self.nodes[node].children.iter().flatten().map(move |&e| &self.edges[e])
    }

    fn node_state(&self, g: &mut Graph, node: usize) -> Result<State> {
        let (s, row) = self.nodes[node]
            .state
            .ok_or_else(|| Error::Tree(format!("node {node} has no state")))?;
        if s.rows(g) == 1 {
            Ok(s)
        } else {
            Ok(s.row(g, row)?)
        }
    }
}

/// Result of backing values up a tree.
#[derive(Clone, Debug)]
pub struct Backed {
    /// Value node per tree node.
    pub values: Vec<Var>,
    pub root_value: Var,
    /// Root policy per head (0 for heads that were never expanded).
    pub root_pi: Vec<f64>,
    /// Root Q-values per head (`NaN` for heads that were never expanded).
    pub root_q: Vec<f64>,
    /// Policy over expanded children of each interior node, in edge order.
    pub pis: Vec<Option<Var>>,
}

/// Compute `Q = r + discount * V(child)` and `V = sum pi * Q` bottom-up.
/// Leaves use their stored value estimate.
pub fn backup(g: &mut Graph, tree: &PlanTree, mode: Backup) -> Result<Backed> {
    let n = tree.nodes.len();
    let mut values: Vec<Option<Var>> = vec![None; n];
    let mut pis: Vec<Option<Var>> = vec![None; n];
    let mut root_pi = vec![0.0; tree.k];
    let mut root_q = vec![f64::NAN; tree.k];
    for i in (0..n).rev() {
        let node = &tree.nodes[i];
        let edges: Vec<&Edge> = tree.out_edges(i).collect();
        if edges.is_empty() {
            values[i] = Some(
                node.leaf_value
                    .ok_or_else(|| Error::Tree(format!("leaf {i} has no value estimate")))?,
            );
            continue;
        }
        let mut qs = Vec::with_capacity(edges.len());
        for e in &edges {
            let vc = values[e.child].expect("children follow their parents");
            let dv = g.mul(e.discount, vc)?;
            qs.push(g.add(e.reward, dv)?);
        }
        let q = g.concat(&qs)?;
        let pi = match mode {
            Backup::Softmax(tau) => g.softmax(q, tau)?,
            Backup::Visits => {
                let total: u32 = edges.iter().map(|e| e.visits).sum();
                if total == 0 {
                    return Err(Error::Tree(format!("node {i} has children but no visits")));
                }
                let w = edges.iter().map(|e| e.visits as f64 / total as f64).collect();
                g.constant_from(vec![1, edges.len()], w)?
            }
        };
        let pq = g.mul(pi, q)?;
        values[i] = Some(g.sum_last(pq));
        pis[i] = Some(pi);
        if i == 0 {
            for (j, e) in edges.iter().enumerate() {
                root_pi[e.head] = g.value(pi)[j];
                root_q[e.head] = g.value(q)[j];
            }
        }
    }
    let values: Vec<Var> = values.into_iter().map(|v| v.expect("all nodes visited")).collect();
    Ok(Backed {
        root_value: values[0],
        values,
        root_pi,
        root_q,
        pis,
    })
}

/// Number of nodes in a complete K-ary tree of the given depth.
pub fn complete_size(k: usize, depth: usize) -> usize {
    let mut total = 0usize;
    let mut level = 1usize;
    for _ in 0..=depth {
        total = total.saturating_add(level);
        level = level.saturating_mul(k);
    }
    total
}

/// One expanded level of a batch of complete trees. Row `i*K + j` is head
/// `j` of the `i`-th node on the level above.
#[derive(Clone, Debug)]
pub struct Level {
    pub actions: Var,
    pub reward: Var,
    pub discount: Var,
    pub next: State,
}

/// Complete trees over every root row, stored level by level.
#[derive(Clone, Debug)]
pub struct CompleteForest {
    pub k: usize,
    pub roots: State,
    pub levels: Vec<Level>,
    /// Value estimates of the deepest level.
    pub leaf_values: Var,
}

/// Complete trees of depth `depth` over every root row, expanded one level
/// at a time for all roots together.
pub fn expand_complete(
    g: &mut Graph,
    model: &BoundModel,
    afford: &BoundAffordance,
    roots: State,
    depth: usize,
    budget: usize,
) -> Result<CompleteForest> {
    let k = afford.k();
    let needed = complete_size(k, depth);
    if needed > budget {
        return Err(Error::NodeBudget { needed, budget });
    }
    let mut levels = Vec::with_capacity(depth);
    let mut state = roots;
    for _ in 0..depth {
        let actions = afford.afford(g, &state)?;
        let rep = state.repeat(g, k)?;
        let step = model.step(g, &rep, actions)?;
        levels.push(Level {
            actions,
            reward: step.reward,
            discount: step.discount,
            next: step.next,
        });
        state = step.next;
    }
    let leaf_values = model.value(g, &state)?;
    Ok(CompleteForest {
        k,
        roots,
        levels,
        leaf_values,
    })
}

impl CompleteForest {
    pub fn num_roots(&self, g: &Graph) -> usize {
        self.roots.rows(g)
    }

    /// The tree of root `b` as explicit nodes and edges (slices of the level
    /// tensors).
    pub fn tree(&self, g: &mut Graph, b: usize) -> Result<PlanTree> {
        let k = self.k;
        let mut t = PlanTree::new(k);
        t.nodes[0].state = Some((self.roots, b));
        // (node, row within its level)
        let mut frontier = vec![(0usize, b)];
        for level in &self.levels {
            let mut next = Vec::with_capacity(frontier.len() * k);
            for &(node, row) in &frontier {
                t.nodes[node].actions = Some((level.actions, row * k));
                for j in 0..k {
                    let r = row * k + j;
                    let rv = g.slice_rows(level.reward, r, 1)?;
                    let dv = g.slice_rows(level.discount, r, 1)?;
                    let c = t.add_child(node, j, rv, dv)?;
                    t.nodes[c].state = Some((level.next, r));
                    next.push((c, r));
                }
            }
            frontier = next;
        }
        for (node, row) in frontier {
            let v = g.slice_rows(self.leaf_values, row, 1)?;
            t.set_leaf_value(node, v);
        }
        Ok(t)
    }
}

/// Softmax backup of a whole forest with one set of ops per level.
#[derive(Clone, Copy, Debug)]
pub struct ForestBackup {
    /// `(B, 1)`
    pub root_values: Var,
    /// `(B, K)`; absent for depth 0.
    pub root_pi: Option<Var>,
    pub root_q: Option<Var>,
}

pub fn backup_forest(g: &mut Graph, forest: &CompleteForest, tau: f64) -> Result<ForestBackup> {
    let k = forest.k;
    let mut v = forest.leaf_values;
    let mut top = None;
    for level in forest.levels.iter().rev() {
        let dv = g.mul(level.discount, v)?;
        let q = g.add(level.reward, dv)?;
        let rows = g.shape(q)[0] / k;
        let q = g.reshape(q, vec![rows, k])?;
        let pi = g.softmax(q, tau)?;
        let pq = g.mul(pi, q)?;
        v = g.sum_last(pq);
        top = Some((pi, q));
    }
    Ok(ForestBackup {
        root_values: v,
        root_pi: top.map(|t| t.0),
        root_q: top.map(|t| t.1),
    })
}

/// Running min/max of backed-up values for normalizing Q in pUCT.
#[derive(Clone, Copy, Debug)]
struct MinMax {
    lo: f64,
    hi: f64,
}

impl MinMax {
    fn new() -> Self {
        MinMax {
            lo: f64::INFINITY,
            hi: f64::NEG_INFINITY,
        }
    }

    fn update(&mut self, v: f64) {
        self.lo = self.lo.min(v);
        self.hi = self.hi.max(v);
    }

    fn normalize(&self, v: f64) -> f64 {
        if self.hi > self.lo {
            (v - self.lo) / (self.hi - self.lo)
        } else {
            v
        }
    }
}

/// pUCT score of every head at `node` under a uniform prior.
pub fn puct_scores(tree: &PlanTree, node: usize, c1: f64, c2: f64) -> Vec<f64> {
    let mut mm = MinMax::new();
    for e in &tree.edges {
        if e.visits > 0 {
            mm.update(e.value_sum / e.visits as f64);
        }
    }
    puct_with(tree, node, c1, c2, &mm)
}

fn puct_with(tree: &PlanTree, node: usize, c1: f64, c2: f64, mm: &MinMax) -> Vec<f64> {
    let k = tree.k;
    let prior = 1.0 / k as f64;
    let parent = tree.nodes[node].visits as f64;
    let explore = prior * parent.sqrt() * (c1 + ((parent + c2 + 1.0) / c2).ln());
    tree.nodes[node]
        .children
        .iter()
        .map(|c| {
            let (n, q) = match c {
                Some(e) if tree.edges[*e].visits > 0 => {
                    let e = &tree.edges[*e];
                    (e.visits as f64, mm.normalize(e.value_sum / e.visits as f64))
                }
                _ => (0.0, 0.0),
            };
            q + explore / (1.0 + n)
        })
        .collect()
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// UCT search from a single root state with `trajectories` descents to
/// `depth`.
///
/// The root first tries every unvisited head (uniformly at random), non-root
/// nodes seen for the first time pick a head uniformly, and revisited nodes
/// use pUCT with a uniform prior and min-max normalized Q.
#[allow(clippy::too_many_arguments)]
pub fn expand_uct(
    g: &mut Graph,
    model: &BoundModel,
    afford: &BoundAffordance,
    root: State,
    depth: usize,
    trajectories: usize,
    c1: f64,
    c2: f64,
    rng: &mut dyn RngCore,
) -> Result<PlanTree> {
    let k = afford.k();
    let mut tree = PlanTree::new(k);
    tree.nodes[0].state = Some((root, 0));
    let mut mm = MinMax::new();
    for _ in 0..trajectories {
        let mut path = Vec::with_capacity(depth);
        let mut node = 0;
        for d in 0..depth {
            let head = {
                let n = &tree.nodes[node];
                let fresh: Vec<usize> = (0..k)
                    .filter(|&j| n.children[j].map_or(true, |e| tree.edges[e].visits == 0))
                    .collect();
                if d == 0 && !fresh.is_empty() {
                    *fresh.choose(rng).expect("non-empty")
                } else if d > 0 && n.visits == 0 {
                    rng.gen_range(0..k)
                } else {
                    argmax(&puct_with(&tree, node, c1, c2, &mm))
                }
            };
            let edge = match tree.nodes[node].children[head] {
                Some(e) => e,
                None => {
                    let s = tree.node_state(g, node)?;
                    let acts = match tree.nodes[node].actions {
                        Some((a, _)) => a,
                        None => {
                            let a = afford.afford(g, &s)?;
                            tree.nodes[node].actions = Some((a, 0));
                            a
                        }
                    };
                    let a = g.slice_rows(acts, head, 1)?;
                    let step = model.step(g, &s, a)?;
                    let c = tree.add_child(node, head, step.reward, step.discount)?;
                    tree.nodes[c].state = Some((step.next, 0));
                    tree.nodes[node].children[head].expect("just added")
                }
            };
            path.push(edge);
            node = tree.edges[edge].child;
        }
        let leaf_v = match tree.nodes[node].leaf_value {
            Some(v) => v,
            None => {
                let s = tree.node_state(g, node)?;
                let v = model.value(g, &s)?;
                tree.set_leaf_value(node, v);
                v
            }
        };
        let mut ret = g.item(leaf_v);
        tree.nodes[node].visits += 1;
        for &e in path.iter().rev() {
            let edge = &mut tree.edges[e];
            ret = g.item(edge.reward) + g.item(edge.discount) * ret;
            edge.visits += 1;
            edge.value_sum += ret;
            mm.update(ret);
            let p = edge.parent;
            tree.nodes[p].visits += 1;
        }
    }
    // root is always materialized so its actions can be reported
    if tree.nodes[0].actions.is_none() {
        let a = afford.afford(g, &root)?;
        tree.nodes[0].actions = Some((a, 0));
    }
    if trajectories == 0 || depth == 0 {
        let v = model.value(g, &root)?;
        tree.set_leaf_value(0, v);
    }
    Ok(tree)
}

/// A planned decision at one root.
#[derive(Clone, Debug)]
pub struct Plan {
    pub pi: Vec<f64>,
    pub q: Vec<f64>,
    pub value: f64,
    /// Root affordance actions in head order.
    pub actions: Vec<Vec<f64>>,
    pub tree_nodes: usize,
}

impl Plan {
    /// Greedy head: highest probability, lowest index on ties.
    pub fn greedy(&self) -> usize {
        argmax(&self.pi)
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, &p) in self.pi.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // rounding: fall back to the last head with mass
        self.pi.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

/// Plans from a batch of roots.
#[derive(Clone, Debug)]
pub struct BatchPlan {
    /// `(B, 1)` root values.
    pub root_values: Var,
    /// Sum of root values: the affordance objective.
    pub objective: Var,
    pub plans: Vec<Plan>,
}

fn rows_of(g: &Graph, v: Var, start: usize, n: usize) -> Vec<Vec<f64>> {
    let d = g.shape(v)[1];
    let data = g.value(v);
    (start..start + n).map(|r| data[r * d..(r + 1) * d].to_vec()).collect()
}

/// Plan from every root row. Complete trees use the softmax backup; UCT
/// trees use visit counts.
pub fn plan_batch(
    g: &mut Graph,
    model: &BoundModel,
    afford: &BoundAffordance,
    roots: State,
    cfg: &PlannerConfig,
    rng: &mut dyn RngCore,
) -> Result<BatchPlan> {
    if cfg.depth == 0 {
        return Err(Error::Tree("planning depth must be at least 1".into()));
    }
    let b = roots.rows(g);
    let k = afford.k();
    match cfg.mode {
        PlanMode::Complete => {
            let forest = expand_complete(g, model, afford, roots, cfg.depth, cfg.node_budget)?;
            let back = backup_forest(g, &forest, cfg.tau)?;
            let objective = g.sum(back.root_values);
            let pi = back.root_pi.expect("depth >= 1");
            let q = back.root_q.expect("depth >= 1");
            let size = complete_size(k, cfg.depth);
            let plans = (0..b)
                .map(|i| Plan {
                    pi: g.value(pi)[i * k..(i + 1) * k].to_vec(),
                    q: g.value(q)[i * k..(i + 1) * k].to_vec(),
                    value: g.value(back.root_values)[i],
                    actions: rows_of(g, forest.levels[0].actions, i * k, k),
                    tree_nodes: size,
                })
                .collect();
            Ok(BatchPlan {
                root_values: back.root_values,
                objective,
                plans,
            })
        }
        PlanMode::Uct => {
            let mut values = Vec::with_capacity(b);
            let mut plans = Vec::with_capacity(b);
            for r in 0..b {
                let s = if b == 1 { roots } else { roots.row(g, r)? };
                let tree = expand_uct(
                    g,
                    model,
                    afford,
                    s,
                    cfg.depth,
                    cfg.uct_trajectories,
                    cfg.c1,
                    cfg.c2,
                    rng,
                )?;
                let back = backup(g, &tree, Backup::Visits)?;
                plans.push(root_plan(g, &tree, &back));
                values.push(back.root_value);
            }
            let root_values = g.concat(&values)?;
            let root_values = g.reshape(root_values, vec![b, 1])?;
            let objective = g.sum(root_values);
            Ok(BatchPlan {
                root_values,
                objective,
                plans,
            })
        }
    }
}

/// Summarize the plan at one tree's root.
pub fn root_plan(g: &Graph, tree: &PlanTree, back: &Backed) -> Plan {
    let actions = match tree.nodes[0].actions {
        Some((a, base)) => rows_of(g, a, base, tree.k),
        None => Vec::new(),
    };
    Plan {
        pi: back.root_pi.clone(),
        q: back.root_q.clone(),
        value: g.item(back.root_value),
        actions,
        tree_nodes: tree.nodes.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affordance::{AffordanceModule, Variant};
    use crate::model::{ModelDims, ValueEquivalentModel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(g: &mut Graph, v: f64) -> Var {
        g.constant_from(vec![1, 1], vec![v]).unwrap()
    }

    #[test]
    fn one_level_softmax_backup() {
        let mut g = Graph::new();
        let mut t = PlanTree::new(2);
        for (j, r) in [1.0, 0.0].into_iter().enumerate() {
            let (rv, dv, lv) = (c(&mut g, r), c(&mut g, 0.0), c(&mut g, 0.0));
            let ch = t.add_child(0, j, rv, dv).unwrap();
            t.set_leaf_value(ch, lv);
        }
        let b = backup(&mut g, &t, Backup::Softmax(1.0)).unwrap();
        let e = std::f64::consts::E;
        assert!((b.root_pi[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((g.item(b.root_value) - e / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn discount_scales_child_value() {
        let mut g = Graph::new();
        let mut t = PlanTree::new(1);
        let (r, d, v) = (c(&mut g, 0.5), c(&mut g, 0.9), c(&mut g, 2.0));
        let ch = t.add_child(0, 0, r, d).unwrap();
        t.set_leaf_value(ch, v);
        let b = backup(&mut g, &t, Backup::Softmax(1.0)).unwrap();
        assert!((g.item(b.root_value) - 2.3).abs() < 1e-12);
        assert_eq!(b.root_pi, vec![1.0]);
    }

    #[test]
    fn leaf_without_value_is_an_error() {
        let mut g = Graph::new();
        let t = PlanTree::new(3);
        assert!(backup(&mut g, &t, Backup::Softmax(1.0)).is_err());
    }

    #[test]
    fn duplicate_expansion_rejected() {
        let mut g = Graph::new();
        let mut t = PlanTree::new(2);
        let (r, d) = (c(&mut g, 0.0), c(&mut g, 1.0));
        t.add_child(0, 1, r, d).unwrap();
        assert!(t.add_child(0, 1, r, d).is_err());
        assert!(t.add_child(0, 2, r, d).is_err());
    }

    #[test]
    fn visit_backup_uses_counts() {
        let mut g = Graph::new();
        let mut t = PlanTree::new(2);
        for (j, (r, n)) in [(1.0, 3), (-1.0, 1)].into_iter().enumerate() {
            let (rv, dv, lv) = (c(&mut g, r), c(&mut g, 0.5), c(&mut g, 0.0));
            let ch = t.add_child(0, j, rv, dv).unwrap();
            t.set_leaf_value(ch, lv);
            t.edges[j].visits = n;
        }
        let b = backup(&mut g, &t, Backup::Visits).unwrap();
        assert_eq!(b.root_pi, vec![0.75, 0.25]);
        assert!((g.item(b.root_value) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn complete_size_counts_levels() {
        assert_eq!(complete_size(4, 2), 21);
        assert_eq!(complete_size(8, 4), 4681);
        assert_eq!(complete_size(3, 0), 1);
    }

    fn small_agent(k: usize) -> (ValueEquivalentModel, AffordanceModule) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dims = ModelDims {
            obs_dim: 3,
            goal_dim: 2,
            action_dim: 2,
            state_dim: 4,
            hidden: 8,
            options: true,
        };
        let m = ValueEquivalentModel::new(dims, &mut rng).unwrap();
        let a = AffordanceModule::new(Variant::GoalConditioned, k, 4, 2, 2, 8, false, &mut rng).unwrap();
        (m, a)
    }

    #[test]
    fn budget_enforced() {
        let (m, a) = small_agent(8);
        let mut g = Graph::new();
        let bm = m.bind(&mut g, false, 0.99);
        let ba = a.bind(&mut g, false);
        let s = bm.encode_rows(&mut g, &[&[0.0, 0.1, 0.2]], &[&[1.0, 0.0]]).unwrap();
        let err = expand_complete(&mut g, &bm, &ba, s, 4, 4096).unwrap_err();
        assert!(matches!(err, Error::NodeBudget { needed: 4681, budget: 4096 }));
    }

    #[test]
    fn batched_trees_match_single_trees() {
        let (m, a) = small_agent(3);
        let obs: [&[f64]; 2] = [&[0.0, 0.1, 0.2], &[0.5, -0.3, 0.9]];
        let goals: [&[f64]; 2] = [&[1.0, 0.0], &[0.0, 1.0]];
        let mut g = Graph::new();
        let bm = m.bind(&mut g, false, 0.99);
        let ba = a.bind(&mut g, false);
        let s = bm.encode_rows(&mut g, &obs, &goals).unwrap();
        let forest = expand_complete(&mut g, &bm, &ba, s, 2, 4096).unwrap();
        let fb = backup_forest(&mut g, &forest, 1.0).unwrap();
        assert_eq!(forest.num_roots(&g), 2);
        for i in 0..2 {
            let t = forest.tree(&mut g, i).unwrap();
            assert_eq!(t.nodes.len(), 13);
            let b = backup(&mut g, &t, Backup::Softmax(1.0)).unwrap();
            assert!((g.item(b.root_value) - g.value(fb.root_values)[i]).abs() < 1e-12);
            let single = bm.encode_rows(&mut g, &[obs[i]], &[goals[i]]).unwrap();
            let fs = expand_complete(&mut g, &bm, &ba, single, 2, 4096).unwrap();
            let bs = backup_forest(&mut g, &fs, 1.0).unwrap();
            assert!((g.item(b.root_value) - g.item(bs.root_values)).abs() < 1e-12);
            let pi = &g.value(fb.root_pi.unwrap())[i * 3..i * 3 + 3];
            for (x, y) in pi.iter().zip(&b.root_pi) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uct_covers_root_and_counts_trajectories() {
        let (m, a) = small_agent(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new();
        let bm = m.bind(&mut g, false, 0.99);
        let ba = a.bind(&mut g, false);
        let s = bm.encode_rows(&mut g, &[&[0.0, 0.1, 0.2]], &[&[1.0, 0.0]]).unwrap();
        let t = expand_uct(&mut g, &bm, &ba, s, 2, 20, 1.25, 19652.0, &mut rng).unwrap();
        let root: Vec<u32> = t.out_edges(0).map(|e| e.visits).collect();
        assert_eq!(root.len(), 4);
        assert!(root.iter().all(|&n| n >= 1));
        assert_eq!(root.iter().sum::<u32>(), 20);
        assert!(t.max_depth() <= 2);
        let b = backup(&mut g, &t, Backup::Visits).unwrap();
        assert!((b.root_pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sample_respects_zero_mass() {
        let p = Plan {
            pi: vec![0.0, 1.0, 0.0],
            q: vec![0.0; 3],
            value: 0.0,
            actions: vec![],
            tree_nodes: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(p.sample(&mut rng), 1);
        }
        assert_eq!(p.greedy(), 1);
    }
}
