//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria 1-4 and 10 are computed on every run. Criteria 5-9 need trained
//! agents; their runs are cached under the cargo target directory and are
//! trained only when `GRASP_ACCEPTANCE_TRAIN=1` is set (use `--release`).
//! Without a cached run those criteria report FAIL as not evaluated.
//! Set `GRASP_ACCEPTANCE_STRICT=1` to exit non-zero on any FAIL.

use std::path::{Path, PathBuf};
use std::time::Instant;

use grasp::affordance::{AffordanceModule, Variant};
use grasp::autodiff::Graph;
use grasp::model::{discounted_targets, EpisodeSegment, ModelDims, ValueEquivalentModel};
use grasp::planner::{backup, expand_uct, root_plan, Backup, PlanTree};
use grasp_cli::config::ExperimentConfig;
use grasp_cli::experiment::{self, load_agent, seed_dir};
use grasp_cli::metrics::{mean_stderr, MetricsTable};
use grasp_cli::switch::switch_analysis;
use grasp_cli::visualize::{injective_fraction, rollout_heads, GridSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GAMMA: f64 = 0.99;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn not_evaluated(name: &str) -> Verdict {
    verdict(
        false,
        format!("not evaluated: no cached `{name}` run (rerun with GRASP_ACCEPTANCE_TRAIN=1)"),
    )
}

// ---------------------------------------------------------------- 1

fn gradient_fidelity() -> Verdict {
    let t0 = Instant::now();
    let entries = match grasp::gradcheck::run_suite(5) {
        Ok(e) => e,
        Err(e) => return verdict(false, format!("suite error: {e}")),
    };
    let secs = t0.elapsed().as_secs_f64();
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed()).map(|e| e.name.as_str()).collect();
    let worst = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    verdict(
        failed.is_empty() && secs < 60.0,
        format!(
            "{} checks, failed {:?}, worst rel err {worst:.2e}, {secs:.1}s",
            entries.len(),
            failed
        ),
    )
}

// ---------------------------------------------------------------- 2

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
        .map(|&(_, r, n, c)| r + GAMMA.powi(n as i32) * recursive_value(nodes, c, tau))
        .collect()
}

fn recursive_value(nodes: &[ONode], i: usize, tau: f64) -> f64 {
    if nodes[i].kids.is_empty() {
        return nodes[i].leaf;
    }
    let q = q_values(nodes, i, tau);
    softmax(&q, tau).iter().zip(&q).map(|(p, q)| p * q).sum()
}

/// Sum over root-to-leaf paths of path probability times discounted return.
fn enumerate_paths(nodes: &[ONode], i: usize, tau: f64, prob: f64, disc: f64, ret: f64) -> f64 {
    if nodes[i].kids.is_empty() {
        return prob * (ret + disc * nodes[i].leaf);
    }
    let pi = softmax(&q_values(nodes, i, tau), tau);
    nodes[i]
        .kids
        .iter()
        .zip(pi)
        .map(|(&(_, r, n, c), p)| enumerate_paths(nodes, c, tau, prob * p, disc * GAMMA.powi(n as i32), ret + disc * r))
        .sum()
}

fn random_tree(rng: &mut ChaCha8Rng, k: usize, depth: usize) -> Vec<ONode> {
    let mut nodes = vec![ONode {
        leaf: rng.gen_range(-2.0..2.0),
        kids: Vec::new(),
    }];
    let mut depths = vec![0];
    let mut i = 0;
    while i < nodes.len() {
        let d = depths[i];
        if d < depth && (i == 0 || rng.gen_bool(0.85)) {
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
    nodes
}

fn backup_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let (mut worst_v, mut worst_pi) = (0.0f64, 0.0f64);
    for trial in 0..500 {
        let k = 1 + trial % 4;
        let depth = 1 + (trial / 4) % 3;
        let tau = rng.gen_range(0.2..3.0);
        let nodes = random_tree(&mut rng, k, depth);
        let mut g = Graph::new();
        let mut tree = PlanTree::new(k);
        let mut map = vec![0usize; nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            for &(h, r, d, c) in &n.kids {
                let rv = g.constant_from(vec![1, 1], vec![r]).unwrap();
                let dv = g.constant_from(vec![1, 1], vec![GAMMA.powi(d as i32)]).unwrap();
                map[c] = tree.add_child(map[i], h, rv, dv).unwrap();
            }
            if n.kids.is_empty() {
                let v = g.constant_from(vec![1, 1], vec![n.leaf]).unwrap();
                tree.set_leaf_value(map[i], v);
            }
        }
        let b = match backup(&mut g, &tree, Backup::Softmax(tau)) {
            Ok(b) => b,
            Err(e) => return verdict(false, format!("trial {trial}: {e}")),
        };
        for i in 0..nodes.len() {
            let got = g.item(b.values[map[i]]);
            worst_v = worst_v.max((got - recursive_value(&nodes, i, tau)).abs());
            if let Some(pi) = b.pis[map[i]] {
                worst_pi = worst_pi.max((g.value(pi).iter().sum::<f64>() - 1.0).abs());
            }
        }
        let enumerated = enumerate_paths(&nodes, 0, tau, 1.0, 1.0, 0.0);
        worst_v = worst_v.max((g.item(b.root_value) - enumerated).abs());
    }
    verdict(
        worst_v <= 1e-10 && worst_pi <= 1e-12,
        format!("500 trees, max |backup - oracle| {worst_v:.1e}, max |sum pi - 1| {worst_pi:.1e}"),
    )
}

// ---------------------------------------------------------------- 3

fn uct_invariants() -> Verdict {
    const K: usize = 4;
    let dims = ModelDims {
        obs_dim: 5,
        goal_dim: 3,
        action_dim: 2,
        state_dim: 6,
        hidden: 16,
        options: true,
    };
    let (mut plans, mut bad) = (0, Vec::new());
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let model = ValueEquivalentModel::new(dims, &mut rng).unwrap();
        let afford = AffordanceModule::new(Variant::GoalConditioned, K, 6, 3, 2, 16, false, &mut rng).unwrap();
        let obs: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let goal: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for h in [20usize, 50] {
            let mut g = Graph::new();
            let bm = model.bind(&mut g, false, GAMMA);
            let ba = afford.bind(&mut g, false);
            let root = bm.encode_rows(&mut g, &[&obs], &[&goal]).unwrap();
            let depth = 1 + (seed as usize % 3);
            let tree = expand_uct(&mut g, &bm, &ba, root, depth, h, 1.25, 19652.0, &mut rng).unwrap();
            let counts: Vec<u32> = (0..K)
                .map(|j| tree.nodes[0].children[j].map_or(0, |e| tree.edges[e].visits))
                .collect();
            let total: u32 = counts.iter().sum();
            let b = backup(&mut g, &tree, Backup::Visits).unwrap();
            let plan = root_plan(&g, &tree, &b);
            let exact = (0..K).all(|j| plan.pi[j] == counts[j] as f64 / total as f64);
            if counts.contains(&0) || total as usize != h || !exact {
                bad.push(format!("seed {seed} H={h} counts {counts:?}"));
            }
            plans += 1;
        }
    }
    verdict(bad.is_empty() && plans == 200, format!("{plans} plans, {} violations {:?}", bad.len(), bad.first()))
}

// ---------------------------------------------------------------- 4

fn random_segment(rng: &mut ChaCha8Rng, options: bool, dyadic: bool) -> EpisodeSegment {
    let len = rng.gen_range(1..=8);
    let terminal_at = if rng.gen_bool(0.3) { Some(rng.gen_range(0..len)) } else { None };
    EpisodeSegment {
        observations: vec![vec![0.0]; len + 1],
        goal: vec![],
        actions: vec![vec![0.0]; len],
        rewards: (0..len)
            .map(|_| {
                if dyadic {
                    rng.gen_range(-16i32..=16) as f64 / 8.0
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect(),
        durations: (0..len).map(|_| if options { rng.gen_range(1..=12) } else { 1 }).collect(),
        terminal: (0..len).map(|i| Some(i) == terminal_at).collect(),
    }
}

/// Forward n-step sum with the discount exponent taken from durations.
fn forward_return(seg: &EpisodeSegment, j: usize, boot: f64, gamma: f64) -> f64 {
    if seg.terminal.iter().position(|&t| t).is_some_and(|t| j > t) {
        return 0.0;
    }
    let (mut g, mut elapsed) = (0.0, 0i32);
    for i in j..seg.rewards.len() {
        g += gamma.powi(elapsed) * seg.rewards[i];
        elapsed += seg.durations[i] as i32;
        if seg.terminal[i] {
            return g;
        }
    }
    g + gamma.powi(elapsed) * boot
}

fn value_targets() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut exact_misses = 0;
    for _ in 0..1000 {
        let seg = random_segment(&mut rng, false, true);
        let boot = rng.gen_range(-64i32..=64) as f64 / 16.0;
        let gamma = [0.5, 0.75, 0.25][rng.gen_range(0..3)];
        let got = discounted_targets(&seg, boot, gamma);
        exact_misses += (0..seg.len()).filter(|&j| got[j] != forward_return(&seg, j, boot, gamma)).count();
    }
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let seg = random_segment(&mut rng, true, false);
        let boot = rng.gen_range(-5.0..5.0);
        let got = discounted_targets(&seg, boot, GAMMA);
        for j in 0..seg.len() {
            worst = worst.max((got[j] - forward_return(&seg, j, boot, GAMMA)).abs());
        }
    }
    verdict(
        exact_misses == 0 && worst <= 1e-12,
        format!("primitive: {exact_misses} inexact targets over 1000 segments; option: max err {worst:.1e}"),
    )
}

// ---------------------------------------------------------------- trained runs

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cache_root() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn training_enabled() -> bool {
    std::env::var("GRASP_ACCEPTANCE_TRAIN").is_ok_and(|v| v == "1")
}

struct TrainedRun {
    cfg: ExperimentConfig,
    /// `(seed, metrics, wall seconds)`
    seeds: Vec<(u64, MetricsTable, f64)>,
}

impl TrainedRun {
    fn checkpoint(&self, seed: u64) -> PathBuf {
        seed_dir(&self.cfg.output_dir, seed).join("final.ckpt")
    }
}

/// Load a finished cached run whose resolved config matches, or train it when
/// enabled. The stamp file lists per-seed wall time and then the config table.
fn trained(name: &str) -> Result<Option<TrainedRun>, String> {
    let dir = cache_root().join(name);
    let overrides = [("output.dir".to_string(), dir.display().to_string())];
    let cfg = ExperimentConfig::load(&configs_dir().join(format!("{name}.cfg")), &overrides).map_err(|e| e.to_string())?;
    let stamp_path = dir.join("acceptance_stamp.txt");
    let table = cfg.raw.table();
    let cached = std::fs::read_to_string(&stamp_path)
        .ok()
        .and_then(|s| s.split_once("---\n").map(|(t, c)| (t.to_string(), c.to_string())))
        .filter(|(_, c)| *c == table);
    let times: Vec<f64> = match cached {
        Some((times, _)) => times.lines().filter_map(|l| l.parse().ok()).collect(),
        None if training_enabled() => {
            eprintln!("training `{name}` ({} seeds)", cfg.seeds.len());
            std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
            std::fs::write(dir.join("config.txt"), &table).map_err(|e| e.to_string())?;
            let mut times = Vec::new();
            for &seed in &cfg.seeds {
                let t0 = Instant::now();
                experiment::run_seed(&cfg, seed).map_err(|e| format!("{name} seed {seed}: {e}"))?;
                times.push(t0.elapsed().as_secs_f64());
                eprintln!("  seed {seed}: {:.0}s", times.last().unwrap());
            }
            experiment::write_aggregate(&cfg).map_err(|e| e.to_string())?;
            let lines: String = times.iter().map(|t| format!("{t}\n")).collect();
            std::fs::write(&stamp_path, format!("{lines}---\n{table}")).map_err(|e| e.to_string())?;
            times
        }
        None => return Ok(None),
    };
    if times.len() != cfg.seeds.len() {
        return Err(format!("{name}: stamp lists {} seeds, config {}", times.len(), cfg.seeds.len()));
    }
    let mut seeds = Vec::new();
    for (&seed, &t) in cfg.seeds.iter().zip(&times) {
        let table = MetricsTable::read(&seed_dir(&dir, seed).join("metrics.csv")).map_err(|e| e.to_string())?;
        seeds.push((seed, table, t));
    }
    Ok(Some(TrainedRun { cfg, seeds }))
}

/// `(step, value)` of every evaluation row.
fn evals(t: &MetricsTable, column: &str) -> Vec<(f64, f64)> {
    t.series(column)
}

fn first_reaching(t: &MetricsTable, threshold: f64, max_step: f64) -> Option<f64> {
    evals(t, "eval_success")
        .into_iter()
        .find(|&(s, v)| v >= threshold && s <= max_step)
        .map(|(s, _)| s)
}

fn with_run(name: &str, f: impl FnOnce(&TrainedRun) -> Verdict) -> Verdict {
    match trained(name) {
        Ok(Some(run)) => f(&run),
        Ok(None) => not_evaluated(name),
        Err(e) => verdict(false, format!("run error: {e}")),
    }
}

// ---------------------------------------------------------------- 5

fn collect_learning() -> Verdict {
    with_run("collect_sa3", |run| {
        let mut hits = 0;
        let mut parts = Vec::new();
        for (seed, t, secs) in &run.seeds {
            let best = evals(t, "eval_success").iter().filter(|p| p.0 <= 150_000.0).map(|p| p.1).fold(0.0, f64::max);
            let ok = first_reaching(t, 0.9, 150_000.0).is_some() && *secs <= 1800.0;
            hits += usize::from(ok);
            parts.push(format!("seed {seed}: best {best:.2} in {secs:.0}s"));
        }
        verdict(hits >= 4, format!("{hits}/5 seeds reach 0.9 within 150k steps and 30 min ({})", parts.join("; ")))
    })
}

// ---------------------------------------------------------------- 6

fn affordance_discovery() -> Verdict {
    with_run("collect_sa3", |run| {
        let seed = run.seeds[0].0;
        let result = load_agent(&run.cfg, &run.checkpoint(seed))
            .and_then(|agent| rollout_heads(&agent, run.cfg.train.env, &GridSpec::default()));
        match result {
            Ok(r) => {
                let frac = injective_fraction(&r, 0.1);
                verdict(frac >= 0.8, format!("seed {seed}: injective at {frac:.2} of 3x3 starts (delta 0.1)"))
            }
            Err(e) => verdict(false, e.to_string()),
        }
    })
}

// ---------------------------------------------------------------- 7

fn final_returns(run: &TrainedRun) -> Vec<f64> {
    run.seeds
        .iter()
        .filter_map(|(_, t, _)| evals(t, "eval_return").last().map(|p| p.1))
        .collect()
}

fn rnd_ablation() -> Verdict {
    match (trained("reach_ga4"), trained("reach_rnd_ga4")) {
        (Ok(Some(ga)), Ok(Some(rnd))) => {
            let (a, b) = (final_returns(&ga), final_returns(&rnd));
            let ((ma, sa), (mb, sb)) = (mean_stderr(&a), mean_stderr(&b));
            let pooled = (sa * sa + sb * sb).sqrt();
            let steps_ok = ga.cfg.train.steps <= 100_000 && rnd.cfg.train.steps <= 100_000;
            verdict(
                a.len() == 5 && b.len() == 5 && steps_ok && ma - mb >= 3.0 * pooled,
                format!(
                    "GA-4 {ma:.2} ± {sa:.2}, RND GA-4 {mb:.2} ± {sb:.2}; gap {:.1} pooled SE",
                    (ma - mb) / pooled.max(f64::MIN_POSITIVE)
                ),
            )
        }
        (Err(e), _) | (_, Err(e)) => verdict(false, format!("run error: {e}")),
        (Ok(None), _) => not_evaluated("reach_ga4"),
        (_, Ok(None)) => not_evaluated("reach_rnd_ga4"),
    }
}

// ---------------------------------------------------------------- 8

fn tree_vs_trajectory() -> Verdict {
    match (trained("point_mass_ga4"), trained("point_mass_ga1")) {
        (Ok(Some(ga4)), Ok(Some(ga1))) => {
            let mut wins = 0;
            let mut parts = Vec::new();
            for ((s, t4, _), (_, t1, _)) in ga4.seeds.iter().zip(&ga1.seeds) {
                let f4 = first_reaching(t4, 0.5, f64::INFINITY);
                let f1 = first_reaching(t1, 0.5, f64::INFINITY);
                let ok = match (f4, f1) {
                    (Some(a), Some(b)) => a <= b,
                    (Some(_), None) => true,
                    _ => false,
                };
                wins += usize::from(ok);
                let show = |f: Option<f64>| f.map_or("never".to_string(), |s| format!("{s:.0}"));
                parts.push(format!("seed {s}: GA-4 {} vs GA-1 {}", show(f4), show(f1)));
            }
            verdict(wins >= 4, format!("{wins}/5 seeds ({})", parts.join("; ")))
        }
        (Err(e), _) | (_, Err(e)) => verdict(false, format!("run error: {e}")),
        (Ok(None), _) => not_evaluated("point_mass_ga4"),
        (_, Ok(None)) => not_evaluated("point_mass_ga1"),
    }
}

// ---------------------------------------------------------------- 9

fn switching() -> Verdict {
    with_run("collect_ga4", |run| {
        let seed = run.seeds[0].0;
        let result = load_agent(&run.cfg, &run.checkpoint(seed))
            .and_then(|agent| switch_analysis(&agent, run.cfg.train.env, 1000, 0));
        match result {
            Ok(r) => {
                let (pm, _) = r.planning_stats();
                let (h, hm, hs) = r.best_head();
                let emitted = r.deltas().iter().all(|d| d.len() == 1000);
                verdict(
                    emitted && r.planning_not_worse(),
                    format!("1000 configs; planning {pm:.3}, best head {h} {hm:.3} ± {hs:.3}"),
                )
            }
            Err(e) => verdict(false, e.to_string()),
        }
    })
}

// ---------------------------------------------------------------- 10

fn determinism() -> Verdict {
    let root = std::env::temp_dir().join(format!("grasp-acceptance-det-{}", std::process::id()));
    let mut identical = true;
    let mut files = 0;
    for env in ["collect", "point_mass", "reach_goal"] {
        let text = |out: &Path| {
            format!(
                "env.id = {env}\nmodel.state_dim = 4\nmodel.hidden = 8\nafford.hidden = 8\nafford.K = 2\n\
                 train.steps = 120\ntrain.warmup = 40\ntrain.batch_size = 4\nmodel.unroll_len = 3\n\
                 target.sync_period = 25\neval.interval = 60\neval.episodes = 1\nlog.interval = 20\n\
                 seeds = 0,1\noutput.dir = {}\n",
                out.display()
            )
        };
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = root.join(format!("{env}-{rep}"));
            let cfg = match ExperimentConfig::parse(&text(&out), |_| None, &[]) {
                Ok(c) => c,
                Err(e) => return verdict(false, e.to_string()),
            };
            if let Err(e) = experiment::run(&cfg, rep == 1) {
                return verdict(false, e.to_string());
            }
            outputs.push(out);
        }
        for seed in [0, 1] {
            let read = |d: &Path| std::fs::read(seed_dir(d, seed).join("metrics.csv")).unwrap_or_default();
            identical &= read(&outputs[0]) == read(&outputs[1]);
            files += 1;
        }
    }
    let _ = std::fs::remove_dir_all(&root);
    verdict(identical, format!("{files} metric CSVs compared across sequential and threaded reruns"))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("gradient fidelity", gradient_fidelity),
        ("backup oracle", backup_oracle),
        ("UCT invariants", uct_invariants),
        ("value-target reduction", value_targets),
        ("Collect learning (SA-3)", collect_learning),
        ("affordance discovery", affordance_discovery),
        ("RND ablation ordering", rnd_ablation),
        ("tree vs trajectory ordering", tree_vs_trajectory),
        ("switching analysis", switching),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let v = check();
        failed += usize::from(!v.pass);
        println!("{} criterion {:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, i + 1, v.detail);
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 && std::env::var("GRASP_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
