//! Tree backups against a plain recursive oracle and a path enumeration over
//! randomized trees.

use grasp::autodiff::Graph;
use grasp::planner::{backup, Backup, PlanTree};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GAMMA: f64 = 0.99;

/// Oracle node: leaf estimate and `(head, reward, duration, child)` edges.
struct ONode {
    leaf: f64,
    kids: Vec<(usize, f64, u32, usize)>,
}

fn softmax(q: &[f64], tau: f64) -> Vec<f64> {
    let m = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = q.iter().map(|x| ((x - m) / tau).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

fn q_values(nodes: &[ONode], i: usize, tau: f64) -> Vec<f64> {
    nodes[i]
        .kids
        .iter()
        .map(|&(_, r, n, c)| r + GAMMA.powi(n as i32) * value(nodes, c, tau))
        .collect()
}

fn value(nodes: &[ONode], i: usize, tau: f64) -> f64 {
    if nodes[i].kids.is_empty() {
        return nodes[i].leaf;
    }
    let q = q_values(nodes, i, tau);
    softmax(&q, tau).iter().zip(&q).map(|(p, q)| p * q).sum()
}

/// Sum over root-to-leaf paths of path probability times discounted return.
fn enumerate(nodes: &[ONode], i: usize, tau: f64, prob: f64, disc: f64, ret: f64) -> f64 {
    if nodes[i].kids.is_empty() {
        return prob * (ret + disc * nodes[i].leaf);
    }
    let pi = softmax(&q_values(nodes, i, tau), tau);
    nodes[i]
        .kids
        .iter()
        .zip(pi)
        .map(|(&(_, r, n, c), p)| {
            enumerate(nodes, c, tau, prob * p, disc * GAMMA.powi(n as i32), ret + disc * r)
        })
        .sum()
}

/// A random tree with heads drawn from `0..k` and depth at most `depth`.
fn random_tree(rng: &mut ChaCha8Rng, k: usize, depth: usize) -> (Vec<ONode>, Vec<usize>) {
    let mut nodes = vec![ONode {
        leaf: rng.gen_range(-2.0..2.0),
        kids: Vec::new(),
    }];
    let mut depths = vec![0];
    let mut i = 0;
    while i < nodes.len() {
        let d = depths[i];
        let stays_leaf = d == depth || (i > 0 && rng.gen_bool(0.15));
        if !stays_leaf {
            let mut heads: Vec<usize> = (0..k).filter(|_| rng.gen_bool(0.7)).collect();
            if heads.is_empty() {
                heads.push(rng.gen_range(0..k));
            }
            for h in heads {
                let c = nodes.len();
                nodes.push(ONode {
                    leaf: rng.gen_range(-2.0..2.0),
                    kids: Vec::new(),
                });
                depths.push(d + 1);
                let r = rng.gen_range(-1.0..1.0);
                let n = rng.gen_range(1..=8);
                nodes[i].kids.push((h, r, n, c));
            }
        }
        i += 1;
    }
    (nodes, depths)
}

fn build(g: &mut Graph, nodes: &[ONode], k: usize) -> (PlanTree, Vec<usize>) {
    let mut t = PlanTree::new(k);
    // oracle index -> tree index
    let mut map = vec![0usize; nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        for &(h, r, d, c) in &n.kids {
            let rv = g.constant_from(vec![1, 1], vec![r]).unwrap();
            let dv = g.constant_from(vec![1, 1], vec![GAMMA.powi(d as i32)]).unwrap();
            map[c] = t.add_child(map[i], h, rv, dv).unwrap();
        }
        if n.kids.is_empty() {
            let v = g.constant_from(vec![1, 1], vec![n.leaf]).unwrap();
            t.set_leaf_value(map[i], v);
        }
    }
    (t, map)
}

#[test]
fn softmax_backup_matches_oracles_on_500_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..500 {
        let k = 1 + trial % 4;
        let depth = 1 + (trial / 4) % 3;
        let tau = rng.gen_range(0.2..3.0);
        let (nodes, _) = random_tree(&mut rng, k, depth);
        let mut g = Graph::new();
        let (tree, map) = build(&mut g, &nodes, k);
        let b = backup(&mut g, &tree, Backup::Softmax(tau)).unwrap();
        for (i, n) in nodes.iter().enumerate() {
            let want = value(&nodes, i, tau);
            let got = g.item(b.values[map[i]]);
            assert!((got - want).abs() < 1e-10, "trial {trial} node {i}: {got} vs {want}");
            match b.pis[map[i]] {
                Some(pi) => {
                    assert!(!n.kids.is_empty());
                    let s: f64 = g.value(pi).iter().sum();
                    assert!((s - 1.0).abs() <= 1e-12, "trial {trial} node {i}: pi sums to {s}");
                }
                None => assert!(n.kids.is_empty()),
            }
        }
        let enumerated = enumerate(&nodes, 0, tau, 1.0, 1.0, 0.0);
        assert!((g.item(b.root_value) - enumerated).abs() < 1e-10, "trial {trial}");
    }
}

#[test]
fn visit_backup_uses_count_fractions() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let k = rng.gen_range(1..=4);
        let (nodes, _) = random_tree(&mut rng, k, 2);
        let mut g = Graph::new();
        let (mut tree, map) = build(&mut g, &nodes, k);
        let visits: Vec<u32> = (0..tree.edges.len()).map(|_| rng.gen_range(1..10)).collect();
        for (e, v) in tree.edges.iter_mut().zip(&visits) {
            e.visits = *v;
        }
        let b = backup(&mut g, &tree, Backup::Visits).unwrap();
        // oracle with count weights, recursive over oracle indices
        fn vis_value(nodes: &[ONode], map: &[usize], tree: &PlanTree, i: usize) -> f64 {
            if nodes[i].kids.is_empty() {
                return nodes[i].leaf;
            }
            let counts: Vec<f64> = nodes[i]
                .kids
                .iter()
                .map(|&(h, _, _, _)| {
                    let e = tree.nodes[map[i]].children[h].unwrap();
                    tree.edges[e].visits as f64
                })
                .collect();
            let total: f64 = counts.iter().sum();
            nodes[i]
                .kids
                .iter()
                .zip(&counts)
                .map(|(&(_, r, n, c), w)| w / total * (r + GAMMA.powi(n as i32) * vis_value(nodes, map, tree, c)))
                .sum()
        }
        let want = vis_value(&nodes, &map, &tree, 0);
        assert!((g.item(b.root_value) - want).abs() < 1e-10);
    }
}
