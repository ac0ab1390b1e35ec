//! Flat `key = value` experiment configuration.
//!
//! Every key has a default; files and `GRASP_<KEY>` environment variables
//! override it (`afford.K` is read from `GRASP_AFFORD_K`). Unknown keys are
//! rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use grasp::affordance::Variant;
use grasp::agent::AgentConfig;
use grasp::env::EnvKind;
use grasp::planner::{complete_size, PlanMode, PlannerConfig};
use grasp::trainer::TrainConfig;

/// `(key, default, meaning)`
pub const KEYS: &[(&str, &str, &str)] = &[
    ("experiment.name", "grasp", "label used in plots and aggregate files"),
    ("env.id", "collect", "collect | point_mass | reach_goal"),
    ("agent.gamma", "0.99", "discount factor"),
    ("model.state_dim", "64", "abstract state width"),
    ("model.hidden", "512", "hidden width of encoder, dynamics, reward and value networks"),
    ("model.lr", "1e-4", "model learning rate"),
    ("model.unroll_len", "5", "segment length n for unrolling and value targets"),
    ("model.duration_weight", "1", "weight of the option-duration term in the model loss"),
    ("target.sync_period", "1000", "learner updates between hard target syncs"),
    ("afford.variant", "GA", "GA | SA | A"),
    ("afford.K", "4", "number of affordance heads"),
    ("afford.lr", "1e-3", "affordance learning rate"),
    ("afford.frozen", "false", "keep affordances at their random initialization"),
    ("afford.hidden", "512", "affordance trunk width"),
    ("plan.mode", "complete", "complete | uct"),
    ("plan.depth", "2", "tree depth D"),
    ("plan.K", "", "optional; must equal afford.K when set"),
    ("plan.tau", "1", "softmax temperature of the complete-tree backup"),
    ("plan.uct_trajectories", "20", "trajectories per UCT search"),
    ("plan.c1", "1.25", "pUCT constant c1"),
    ("plan.c2", "19652", "pUCT constant c2"),
    ("plan.node_budget", "4096", "maximum nodes of a complete tree"),
    ("train.steps", "150000", "environment steps per seed"),
    ("train.warmup", "1000", "transitions stored before learning starts"),
    ("train.batch_size", "32", "segments per learner update"),
    ("train.update_every", "1", "environment steps per learner update"),
    ("train.explore", "0.1", "probability of executing a uniformly random option while training"),
    ("replay.capacity", "200000", "replay buffer size"),
    ("eval.interval", "2000", "environment steps between evaluations"),
    ("eval.episodes", "10", "greedy episodes per evaluation"),
    ("log.interval", "1000", "environment steps between metric rows"),
    ("checkpoint.interval", "0", "environment steps between checkpoints (0: final only)"),
    ("seeds", "0,1,2,3,4", "comma-separated seed list"),
    ("output.dir", "runs/grasp", "directory receiving every output file"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub issues: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for i in &self.issues {
            writeln!(f, "  {i}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

/// Environment variable that overrides `key`.
pub fn env_var_name(key: &str) -> String {
    format!("GRASP_{}", key.replace('.', "_").to_uppercase())
}

/// Raw key/value settings, defaults first.
#[derive(Clone, Debug, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl Default for RawConfig {
    fn default() -> Self {
        RawConfig {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RawConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        if !known(key) {
            return Err(format!("unknown key `{key}`"));
        }
        self.values.insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    /// Parse `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut issues = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = self.set(k.trim(), v) {
                        issues.push(format!("line {}: {e}", no + 1));
                    }
                }
                None => issues.push(format!("line {}: expected `key = value`", no + 1)),
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { issues })
        }
    }

    /// Apply `GRASP_<KEY>` overrides from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        for (k, _, _) in KEYS {
            if let Some(v) = lookup(&env_var_name(k)) {
                self.values.insert(k.to_string(), v.trim().to_string());
            }
        }
    }

    /// Resolved parameters as aligned `key = value` lines.
    pub fn table(&self) -> String {
        let w = KEYS.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
        let mut s = String::new();
        for (k, _, _) in KEYS {
            s.push_str(&format!("{k:<w$} = {}\n", self.get(k)));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub agent: AgentConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub raw: RawConfig,
}

struct Parser<'a> {
    raw: &'a RawConfig,
    issues: Vec<String>,
}

impl Parser<'_> {
    fn parse<T: std::str::FromStr>(&mut self, key: &str, fallback: T) -> T
    where
        T::Err: fmt::Display,
    {
        let v = self.raw.get(key);
        match v.parse::<T>() {
            Ok(x) => x,
            Err(e) => {
                self.issues.push(format!("{key}: cannot parse `{v}`: {e}"));
                fallback
            }
        }
    }

    fn check(&mut self, ok: bool, key: &str, msg: &str) {
        if !ok {
            self.issues.push(format!("{key}: {msg} (got `{}`)", self.raw.get(key)));
        }
    }
}

impl ExperimentConfig {
    pub fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        let mut p = Parser {
            raw: &raw,
            issues: Vec::new(),
        };
        let env: EnvKind = p.parse("env.id", EnvKind::Collect);
        let gamma: f64 = p.parse("agent.gamma", 0.99);
        p.check(gamma > 0.0 && gamma <= 1.0, "agent.gamma", "must lie in (0, 1]");
        let state_dim: usize = p.parse("model.state_dim", 1);
        p.check(state_dim > 0, "model.state_dim", "must be positive");
        let hidden: usize = p.parse("model.hidden", 1);
        p.check(hidden > 0, "model.hidden", "must be positive");
        let model_lr: f64 = p.parse("model.lr", 1e-4);
        p.check(model_lr > 0.0, "model.lr", "must be positive");
        let unroll_len: usize = p.parse("model.unroll_len", 1);
        p.check(unroll_len > 0, "model.unroll_len", "must be positive");
        let sync_period: u64 = p.parse("target.sync_period", 1);
        p.check(sync_period > 0, "target.sync_period", "must be positive");
        let variant: Variant = p.parse("afford.variant", Variant::GoalConditioned);
        let k: usize = p.parse("afford.K", 1);
        p.check(k > 0, "afford.K", "must be at least 1");
        if !raw.get("plan.K").is_empty() {
            let pk: usize = p.parse("plan.K", k);
            p.check(pk == k, "plan.K", "must equal afford.K");
        }
        let afford_lr: f64 = p.parse("afford.lr", 1e-3);
        p.check(afford_lr > 0.0, "afford.lr", "must be positive");
        let frozen: bool = p.parse("afford.frozen", false);
        let afford_hidden: usize = p.parse("afford.hidden", 1);
        p.check(afford_hidden > 0, "afford.hidden", "must be positive");
        let mode: PlanMode = p.parse("plan.mode", PlanMode::Complete);
        let depth: usize = p.parse("plan.depth", 2);
        let tau: f64 = p.parse("plan.tau", 1.0);
        p.check(tau > 0.0, "plan.tau", "must be positive");
        let uct_trajectories: usize = p.parse("plan.uct_trajectories", 1);
        p.check(uct_trajectories > 0, "plan.uct_trajectories", "must be positive");
        let c1: f64 = p.parse("plan.c1", 1.25);
        let c2: f64 = p.parse("plan.c2", 19652.0);
        p.check(c2 > 0.0, "plan.c2", "must be positive");
        let node_budget: usize = p.parse("plan.node_budget", 4096);
        if mode == PlanMode::Complete && k > 0 {
            let needed = complete_size(k, depth);
            if needed > node_budget {
                p.issues.push(format!(
                    "plan.node_budget: a complete tree with K={k}, D={depth} needs {needed} nodes (budget {node_budget})"
                ));
            }
        }
        let steps: u64 = p.parse("train.steps", 1);
        p.check(steps > 0, "train.steps", "must be positive");
        let warmup: usize = p.parse("train.warmup", 1);
        let batch_size: usize = p.parse("train.batch_size", 1);
        p.check(batch_size > 0, "train.batch_size", "must be positive");
        let update_every: u64 = p.parse("train.update_every", 1);
        p.check(update_every > 0, "train.update_every", "must be positive");
        let duration_weight: f64 = p.parse("model.duration_weight", 1.0);
        p.check(duration_weight >= 0.0 && duration_weight.is_finite(), "model.duration_weight", "must be finite and >= 0");
        let explore: f64 = p.parse("train.explore", 0.0);
        p.check((0.0..=1.0).contains(&explore), "train.explore", "must lie in [0, 1]");
        let replay_capacity: usize = p.parse("replay.capacity", 1);
        p.check(replay_capacity > 0, "replay.capacity", "must be positive");
        p.check(warmup <= replay_capacity, "train.warmup", "cannot exceed replay.capacity");
        let eval_interval: u64 = p.parse("eval.interval", 0);
        let eval_episodes: usize = p.parse("eval.episodes", 0);
        let log_interval: u64 = p.parse("log.interval", 0);
        let checkpoint_interval: u64 = p.parse("checkpoint.interval", 0);
        let seeds: Vec<u64> = {
            let v = raw.get("seeds");
            let parsed: Result<Vec<u64>, _> = v.split(',').map(|s| s.trim().parse::<u64>()).collect();
            match parsed {
                Ok(s) if !s.is_empty() => s,
                _ => {
                    p.issues.push(format!("seeds: expected comma-separated integers (got `{v}`)"));
                    Vec::new()
                }
            }
        };
        let output_dir = PathBuf::from(raw.get("output.dir"));
        p.check(!raw.get("output.dir").is_empty(), "output.dir", "must be set");
        if !p.issues.is_empty() {
            return Err(ConfigError { issues: p.issues });
        }
        let agent = AgentConfig {
            gamma,
            state_dim,
            hidden,
            variant,
            k,
            afford_hidden,
            frozen,
            planner: PlannerConfig {
                mode,
                depth,
                tau,
                uct_trajectories,
                c1,
                c2,
                node_budget,
            },
        };
        let train = TrainConfig {
            env,
            steps,
            warmup,
            batch_size,
            unroll_len,
            model_lr,
            afford_lr,
            replay_capacity,
            sync_period,
            update_every,
            explore,
            duration_weight,
            log_interval,
            eval_interval,
            eval_episodes,
            checkpoint_interval,
        };
        Ok(ExperimentConfig {
            name: raw.get("experiment.name").to_string(),
            agent,
            train,
            seeds,
            output_dir,
            raw,
        })
    }

    /// Parse text, then apply environment overrides and `overrides`.
    pub fn parse(text: &str, env: impl Fn(&str) -> Option<String>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        raw.apply_text(text)?;
        raw.apply_env(env);
        let mut issues = Vec::new();
        for (k, v) in overrides {
            if let Err(e) = raw.set(k, v) {
                issues.push(e);
            }
        }
        if !issues.is_empty() {
            return Err(ConfigError { issues });
        }
        Self::from_raw(raw)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            issues: vec![format!("{}: {e}", path.display())],
        })?;
        Self::parse(&text, |k| std::env::var(k).ok(), overrides)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_env(_: &str) -> Option<String> {
        None
    }

    #[test]
    fn defaults_validate() {
        let c = ExperimentConfig::parse("", no_env, &[]).unwrap();
        assert_eq!(c.agent.k, 4);
        assert_eq!(c.train.sync_period, 1000);
        assert_eq!(c.train.replay_capacity, 200_000);
        assert_eq!(c.seeds, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let e = ExperimentConfig::parse("afford.K = 3\nafford.kk = 2\n", no_env, &[]).unwrap_err();
        assert_eq!(e.issues, vec!["line 2: unknown key `afford.kk`".to_string()]);
    }

    #[test]
    fn field_level_diagnostics() {
        let e = ExperimentConfig::parse("afford.K = 0\nplan.tau = -1\nmodel.lr = abc", no_env, &[]).unwrap_err();
        assert_eq!(e.issues.len(), 3, "{e}");
        assert!(e.issues.iter().any(|i| i.starts_with("afford.K")));
        assert!(e.issues.iter().any(|i| i.starts_with("plan.tau")));
        assert!(e.issues.iter().any(|i| i.starts_with("model.lr")));
    }

    #[test]
    fn budget_feasibility_checked() {
        let e = ExperimentConfig::parse("afford.K = 8\nplan.depth = 4", no_env, &[]).unwrap_err();
        assert!(e.issues[0].contains("4681"));
        assert!(ExperimentConfig::parse("afford.K = 8\nplan.depth = 4\nplan.mode = uct", no_env, &[]).is_ok());
    }

    #[test]
    fn env_overrides_file() {
        let env = |k: &str| (k == "GRASP_AFFORD_K").then(|| "2".to_string());
        let c = ExperimentConfig::parse("afford.K = 3", env, &[]).unwrap();
        assert_eq!(c.agent.k, 2);
        assert_eq!(env_var_name("plan.uct_trajectories"), "GRASP_PLAN_UCT_TRAJECTORIES");
    }

    #[test]
    fn plan_k_must_match() {
        assert!(ExperimentConfig::parse("afford.K = 3\nplan.K = 4", no_env, &[]).is_err());
        assert!(ExperimentConfig::parse("afford.K = 3\nplan.K = 3", no_env, &[]).is_ok());
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = ExperimentConfig::parse("# header\n\nenv.id = reach_goal  # primitive\n", no_env, &[]).unwrap();
        assert_eq!(c.train.env, EnvKind::ReachGoal);
    }

    #[test]
    fn table_lists_every_key() {
        let raw = RawConfig::default();
        assert_eq!(raw.table().lines().count(), KEYS.len());
    }
}
