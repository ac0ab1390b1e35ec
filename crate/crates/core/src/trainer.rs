//! The training loop: act by planning, store transitions, update the model on
//! replayed segments, ascend the planned root value with respect to the
//! affordance parameters, and hard-sync the target copy.

use std::fmt::Write as _;
use std::path::PathBuf;

use grasp_autodiff::{Adam, Graph, Parameterized};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{Agent, AgentConfig};
use crate::env::{EnvKind, Environment, Observation};
use crate::model::{model_loss_weighted, LossParts, TargetModel};
use crate::planner::plan_batch;
use crate::replay::{ReplayBuffer, Transition};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub env: EnvKind,
    pub steps: u64,
    /// Transitions collected before the first learner update.
    pub warmup: usize,
    pub batch_size: usize,
    pub unroll_len: usize,
    pub model_lr: f64,
    pub afford_lr: f64,
    pub replay_capacity: usize,
    /// Learner updates between hard target syncs.
    pub sync_period: u64,
    /// Environment steps per learner update.
    pub update_every: u64,
    pub log_interval: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Environment steps between checkpoints (0: final checkpoint only).
    pub checkpoint_interval: u64,
    /// Probability of executing a uniformly random action instead of the
    /// planned one while training.
    pub explore: f64,
    /// Weight of the option-duration term in the model loss.
    pub duration_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            env: EnvKind::Collect,
            steps: 150_000,
            warmup: 1000,
            batch_size: 32,
            unroll_len: 5,
            model_lr: 1e-4,
            afford_lr: 1e-3,
            replay_capacity: 200_000,
            sync_period: 1000,
            update_every: 1,
            log_interval: 1000,
            eval_interval: 2000,
            eval_episodes: 10,
            checkpoint_interval: 0,
            explore: 0.1,
            duration_weight: 1.0,
        }
    }
}

/// RNG stream ids derived from one seed.
const STREAM_INIT: u64 = 0;
const STREAM_ENV: u64 = 1;
const STREAM_ACT: u64 = 2;
const STREAM_SAMPLE: u64 = 3;
const STREAM_EVAL: u64 = 4;

pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// One logged line of the metrics CSV. Absent values print as empty fields.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub episode_return: Option<f64>,
    pub episode_len: Option<f64>,
    pub model_loss: Option<f64>,
    pub value_loss: Option<f64>,
    pub reward_loss: Option<f64>,
    pub afford_objective: Option<f64>,
    pub root_value: Option<f64>,
    pub head_frac: Vec<f64>,
    pub eval_return: Option<f64>,
    pub eval_success: Option<f64>,
}

pub const METRIC_COLUMNS: [&str; 8] = [
    "step",
    "episode_return",
    "episode_len",
    "model_loss",
    "value_loss",
    "reward_loss",
    "afford_objective",
    "root_value",
];

impl MetricsRow {
    pub fn header(k: usize) -> String {
        let mut s = METRIC_COLUMNS.join(",");
        for i in 0..k {
            let _ = write!(s, ",head{i}_frac");
        }
        s.push_str(",eval_return,eval_success");
        s
    }

    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let mut s = format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            f(self.episode_return),
            f(self.episode_len),
            f(self.model_loss),
            f(self.value_loss),
            f(self.reward_loss),
            f(self.afford_objective),
            f(self.root_value)
        );
        for h in &self.head_frac {
            let _ = write!(s, ",{h}");
        }
        let _ = write!(s, ",{},{}", f(self.eval_return), f(self.eval_success));
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalStats {
    pub mean_return: f64,
    pub success_rate: f64,
}

#[derive(Clone, Debug, Default)]
struct Accum {
    returns: Vec<f64>,
    lengths: Vec<f64>,
    losses: Vec<LossParts>,
    objectives: Vec<f64>,
    root_values: Vec<f64>,
    heads: Vec<u64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Statistics of a finished run.
#[derive(Clone, Debug, Default)]
pub struct RunSummary {
    pub rows: Vec<MetricsRow>,
    pub updates: u64,
    pub syncs: u64,
}

impl RunSummary {
    /// First logged step whose evaluation success reached `threshold`.
    pub fn first_success(&self, threshold: f64) -> Option<u64> {
        self.rows
            .iter()
            .find(|r| r.eval_success.is_some_and(|s| s >= threshold))
            .map(|r| r.step)
    }

    pub fn last_eval(&self) -> Option<EvalStats> {
        self.rows.iter().rev().find_map(|r| {
            Some(EvalStats {
                mean_return: r.eval_return?,
                success_rate: r.eval_success?,
            })
        })
    }
}

pub struct Trainer {
    pub agent: Agent,
    pub target: TargetModel,
    pub train: TrainConfig,
    pub seed: u64,
    model_opt: Adam,
    afford_opt: Adam,
    buffer: ReplayBuffer,
    env: Box<dyn Environment>,
    eval_env: Box<dyn Environment>,
    rng_env: ChaCha8Rng,
    rng_act: ChaCha8Rng,
    rng_sample: ChaCha8Rng,
    rng_eval: ChaCha8Rng,
    step: u64,
    updates: u64,
    episode: u64,
    current: Option<Observation>,
    ep_return: f64,
    ep_len: u64,
    acc: Accum,
    checkpoint_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(agent_cfg: AgentConfig, train: TrainConfig, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&train.explore) {
            return Err(Error::Config(format!("exploration probability {} outside [0, 1]", train.explore)));
        }
        if !(train.duration_weight >= 0.0 && train.duration_weight.is_finite()) {
            return Err(Error::Config(format!("duration weight {} must be finite and >= 0", train.duration_weight)));
        }
        if train.batch_size == 0 || train.unroll_len == 0 {
            return Err(Error::Config("batch size and unroll length must be positive".into()));
        }
        let env = train.env.build(agent_cfg.gamma);
        let eval_env = train.env.build(agent_cfg.gamma);
        let mut init = stream(seed, STREAM_INIT);
        let agent = Agent::new(env.spec(), agent_cfg, &mut init)?;
        let target = TargetModel::new(&agent.model, &agent.afford);
        let k = agent.cfg.k;
        Ok(Trainer {
            model_opt: Adam::new(train.model_lr),
            afford_opt: Adam::new(train.afford_lr),
            buffer: ReplayBuffer::new(train.replay_capacity),
            env,
            eval_env,
            rng_env: stream(seed, STREAM_ENV),
            rng_act: stream(seed, STREAM_ACT),
            rng_sample: stream(seed, STREAM_SAMPLE),
            rng_eval: stream(seed, STREAM_EVAL),
            step: 0,
            updates: 0,
            episode: 0,
            current: None,
            ep_return: 0.0,
            ep_len: 0,
            acc: Accum {
                heads: vec![0; k],
                ..Accum::default()
            },
            checkpoint_dir: None,
            agent,
            target,
            train,
            seed,
        })
    }

    /// Write checkpoints (periodic, final and on numerical failure) here.
    pub fn with_checkpoints(mut self, dir: PathBuf) -> Self {
        self.checkpoint_dir = Some(dir);
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// One environment step, followed by a learner update when due.
    pub fn env_step(&mut self) -> Result<()> {
        let obs = match self.current.take() {
            Some(o) => o,
            None => {
                self.episode += 1;
                self.ep_return = 0.0;
                self.ep_len = 0;
                self.env.reset(&mut self.rng_env)
            }
        };
        let (head, plan) = self.agent.act(&obs, false, &mut self.rng_act)?;
        if !plan.value.is_finite() {
            return Err(Error::NonFinite(format!("root value at step {}", self.step)));
        }
        let action = if self.train.explore > 0.0 && self.rng_act.gen_bool(self.train.explore) {
            let d = self.agent.spec.action_dim;
            (0..d).map(|_| self.rng_act.gen_range(-1.0..=1.0)).collect()
        } else {
            self.acc.heads[head] += 1;
            plan.actions[head].clone()
        };
        let out = self.env.step(&action)?;
        self.acc.root_values.push(plan.value);
        self.ep_return += out.raw_reward;
        self.ep_len += 1;
        self.buffer.push(Transition {
            episode: self.episode,
            obs: obs.obs,
            goal: obs.goal,
            action,
            reward: out.reward,
            duration: out.duration,
            next_obs: out.observation.obs.clone(),
            terminal: out.terminal,
        });
        if out.done() {
            self.acc.returns.push(self.ep_return);
            self.acc.lengths.push(self.ep_len as f64);
        } else {
            self.current = Some(out.observation);
        }
        self.step += 1;
        if self.buffer.len() >= self.train.warmup && self.step % self.train.update_every == 0 {
            self.learner_update()?;
        }
        Ok(())
    }

    /// Minimize the model loss, then maximize the summed planned root value
    /// with respect to the affordances, then tick the target sync.
    pub fn learner_update(&mut self) -> Result<(LossParts, f64)> {
        let gamma = self.agent.cfg.gamma;
        let n = self.train.unroll_len;
        let segs = self.buffer.sample_batch(self.train.batch_size, n, &mut self.rng_sample)?;
        let targets = self.target.value_targets(&segs, gamma)?;

        let mut g = Graph::new();
        let bm = self.agent.model.bind(&mut g, true, gamma);
        let (loss, parts) = model_loss_weighted(&mut g, &bm, &segs, &targets, n, self.train.duration_weight)?;
        if !parts.total.is_finite() {
            return Err(Error::NonFinite(format!("model loss {parts:?} at update {}", self.updates)));
        }
        let grads = g.backward(loss)?;
        self.agent.model.zero_grads();
        self.agent.model.store_grads(&bm, &grads);
        self.model_opt.step(&mut self.agent.model)?;

        let mut g = Graph::new();
        let bm = self.agent.model.bind(&mut g, false, gamma);
        let ba = self.agent.afford.bind(&mut g, true);
        let first: Vec<&[f64]> = segs.iter().map(|s| s.observations[0].as_slice()).collect();
        let goals: Vec<&[f64]> = segs.iter().map(|s| s.goal.as_slice()).collect();
        let roots = bm.encode_rows(&mut g, &first, &goals)?;
        let objective = plan_batch(&mut g, &bm, &ba, roots, &self.agent.cfg.planner, &mut self.rng_sample)?.objective;
        let obj = g.item(objective);
        if !obj.is_finite() {
            return Err(Error::NonFinite(format!("affordance objective at update {}", self.updates)));
        }
        if !self.agent.afford.frozen() {
            // ascend: descend on the negated objective
            let neg = g.neg(objective);
            let grads = g.backward(neg)?;
            self.agent.afford.zero_grads();
            self.agent.afford.store_grads(&ba, &grads);
            self.afford_opt.step(&mut self.agent.afford)?;
        }

        self.updates += 1;
        self.target
            .tick(self.train.sync_period, &self.agent.model, &self.agent.afford);
        self.acc.losses.push(parts);
        self.acc.objectives.push(obj / segs.len() as f64);
        Ok((parts, obj))
    }

    /// Greedy episodes on the evaluation environment with the eval stream.
    pub fn evaluate(&mut self, episodes: usize) -> Result<EvalStats> {
        let (mut ret, mut succ) = (0.0, 0.0);
        for _ in 0..episodes {
            let mut obs = self.eval_env.reset(&mut self.rng_eval);
            loop {
                let (head, plan) = self.agent.act(&obs, true, &mut self.rng_eval)?;
                let out = self.eval_env.step(&plan.actions[head])?;
                ret += out.raw_reward;
                if out.done() {
                    break;
                }
                obs = out.observation;
            }
            if self.eval_env.succeeded() {
                succ += 1.0;
            }
        }
        let n = episodes.max(1) as f64;
        Ok(EvalStats {
            mean_return: ret / n,
            success_rate: succ / n,
        })
    }

    fn flush(&mut self, eval: Option<EvalStats>) -> MetricsRow {
        let acc = std::mem::take(&mut self.acc);
        let total: u64 = acc.heads.iter().sum();
        let row = MetricsRow {
            step: self.step,
            episode_return: mean(acc.returns.iter().copied()),
            episode_len: mean(acc.lengths.iter().copied()),
            model_loss: mean(acc.losses.iter().map(|l| l.total)),
            value_loss: mean(acc.losses.iter().map(|l| l.value)),
            reward_loss: mean(acc.losses.iter().map(|l| l.reward)),
            afford_objective: mean(acc.objectives.iter().copied()),
            root_value: mean(acc.root_values.iter().copied()),
            head_frac: acc
                .heads
                .iter()
                .map(|&c| if total > 0 { c as f64 / total as f64 } else { 0.0 })
                .collect(),
            eval_return: eval.map(|e| e.mean_return),
            eval_success: eval.map(|e| e.success_rate),
        };
        self.acc.heads = vec![0; self.agent.cfg.k];
        row
    }

    fn save_checkpoint(&self, name: &str) -> Result<()> {
        if let Some(dir) = &self.checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            self.agent.save(&dir.join(name))?;
        }
        Ok(())
    }

    /// Run to the configured step count, handing each metrics row to `sink`.
    /// Numerical failures write a checkpoint before returning the error.
    pub fn run(&mut self, sink: &mut dyn FnMut(&MetricsRow) -> std::io::Result<()>) -> Result<RunSummary> {
        let mut summary = RunSummary::default();
        while self.step < self.train.steps {
            if let Err(e) = self.env_step() {
                if e.is_numerical() {
                    let _ = self.save_checkpoint("nan_abort.ckpt");
                }
                return Err(e);
            }
            let s = self.step;
            let log_due = self.train.log_interval > 0 && s % self.train.log_interval == 0;
            let eval_due = self.train.eval_interval > 0 && s % self.train.eval_interval == 0;
            if log_due || eval_due {
                let eval = if eval_due {
                    Some(self.evaluate(self.train.eval_episodes)?)
                } else {
                    None
                };
                let row = self.flush(eval);
                sink(&row)?;
                summary.rows.push(row);
            }
            if self.train.checkpoint_interval > 0 && s % self.train.checkpoint_interval == 0 {
                self.save_checkpoint(&format!("step_{s}.ckpt"))?;
            }
        }
        self.save_checkpoint("final.ckpt")?;
        summary.updates = self.updates;
        summary.syncs = self.target.syncs;
        Ok(summary)
    }
}
