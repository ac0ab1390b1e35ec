//! Switching analysis: the planning policy against each affordance head used
//! alone as a policy, on shared start/goal configurations.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use grasp::agent::Agent;
use grasp::env::EnvKind;
use grasp::trainer::stream;

use crate::metrics::mean_stderr;
use crate::svg;
use crate::CliError;

/// Which policy acts in an episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Policy {
    /// Greedy root choice of the planner.
    Planning,
    /// Always execute this head's affordance.
    Head(usize),
}

/// Environment stream of configuration `j`; shared by every policy.
pub fn config_rng(seed: u64, j: usize) -> rand_chacha::ChaCha8Rng {
    stream(seed, 2 * j as u64)
}

/// Planner stream of configuration `j` (used by UCT only).
fn plan_rng(seed: u64, j: usize) -> rand_chacha::ChaCha8Rng {
    stream(seed, 2 * j as u64 + 1)
}

/// Undiscounted return of one episode on configuration `j`.
pub fn episode_return(agent: &Agent, env: EnvKind, policy: Policy, seed: u64, j: usize) -> Result<f64, CliError> {
    let mut w = env.build(agent.cfg.gamma);
    let mut obs = w.reset(&mut config_rng(seed, j));
    let mut rng = plan_rng(seed, j);
    let mut ret = 0.0;
    loop {
        let action = match policy {
            Policy::Planning => {
                let (h, plan) = agent.act(&obs, true, &mut rng)?;
                plan.actions[h].clone()
            }
            Policy::Head(k) => agent.head_actions(&obs)?.swap_remove(k),
        };
        let out = w.step(&action)?;
        ret += out.raw_reward;
        if out.done() {
            return Ok(ret);
        }
        obs = out.observation;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeltaStats {
    pub mean: f64,
    pub stderr: f64,
    pub skew: f64,
    pub frac_positive: f64,
    pub frac_negative: f64,
}

/// Sample skewness `m3 / m2^1.5` (zero for a constant sample).
pub fn skewness(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    if m2 <= 1e-300 {
        0.0
    } else {
        m3 / m2.powf(1.5)
    }
}

pub fn delta_stats(d: &[f64]) -> DeltaStats {
    let (mean, stderr) = mean_stderr(d);
    let n = d.len().max(1) as f64;
    DeltaStats {
        mean,
        stderr,
        skew: skewness(d),
        frac_positive: d.iter().filter(|&&x| x > 0.0).count() as f64 / n,
        frac_negative: d.iter().filter(|&&x| x < 0.0).count() as f64 / n,
    }
}

#[derive(Clone, Debug)]
pub struct SwitchReport {
    pub env: EnvKind,
    pub seed: u64,
    pub planning: Vec<f64>,
    /// `heads[k][j]`: return of head `k` as policy on configuration `j`.
    pub heads: Vec<Vec<f64>>,
}

impl SwitchReport {
    pub fn configs(&self) -> usize {
        self.planning.len()
    }

    /// `Δ_k[j] = planning[j] − heads[k][j]`.
    pub fn deltas(&self) -> Vec<Vec<f64>> {
        self.heads
            .iter()
            .map(|h| self.planning.iter().zip(h).map(|(p, q)| p - q).collect())
            .collect()
    }

    pub fn planning_stats(&self) -> (f64, f64) {
        mean_stderr(&self.planning)
    }

    /// `(head, mean, stderr)` of the head with the highest mean return.
    pub fn best_head(&self) -> (usize, f64, f64) {
        self.heads
            .iter()
            .enumerate()
            .map(|(k, h)| {
                let (m, e) = mean_stderr(h);
                (k, m, e)
            })
            .fold((0, f64::NEG_INFINITY, 0.0), |b, x| if x.1 > b.1 { x } else { b })
    }

    /// Planning mean return is at least the best head's mean minus one stderr.
    pub fn planning_not_worse(&self) -> bool {
        let (_, m, e) = self.best_head();
        self.planning_stats().0 >= m - e
    }

    pub fn summary(&self) -> String {
        let (pm, pe) = self.planning_stats();
        let mut s = format!(
            "env {} configs {} seed {}\nplanning mean return {pm:.4} ± {pe:.4}\n",
            self.env.name(),
            self.configs(),
            self.seed
        );
        for (k, (h, d)) in self.heads.iter().zip(self.deltas()).enumerate() {
            let (hm, he) = mean_stderr(h);
            let st = delta_stats(&d);
            let _ = writeln!(
                s,
                "head {k}: mean return {hm:.4} ± {he:.4}; delta mean {:.4} ± {:.4}, skew {:.3}, >0 {:.3}, <0 {:.3}",
                st.mean, st.stderr, st.skew, st.frac_positive, st.frac_negative
            );
        }
        let (b, bm, be) = self.best_head();
        let _ = writeln!(
            s,
            "best head {b} ({bm:.4} ± {be:.4}); planning >= best - stderr: {}",
            self.planning_not_worse()
        );
        s
    }

    /// `config,planning,head0,...` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("config,planning");
        for k in 0..self.heads.len() {
            let _ = write!(s, ",head{k}");
        }
        s.push('\n');
        for j in 0..self.configs() {
            let _ = write!(s, "{j},{}", self.planning[j]);
            for h in &self.heads {
                let _ = write!(s, ",{}", h[j]);
            }
            s.push('\n');
        }
        s
    }
}

/// Evaluate the planning policy and every head on `configs` shared
/// configurations.
pub fn switch_analysis(agent: &Agent, env: EnvKind, configs: usize, seed: u64) -> Result<SwitchReport, CliError> {
    let k = agent.cfg.k;
    if k < 2 {
        return Err(CliError::Other("switching analysis needs at least two affordance heads".into()));
    }
    if agent.spec.kind != env {
        return Err(CliError::Other(format!(
            "checkpoint was built for {}, not {}",
            agent.spec.kind.name(),
            env.name()
        )));
    }
    let planning = (0..configs)
        .map(|j| episode_return(agent, env, Policy::Planning, seed, j))
        .collect::<Result<Vec<_>, _>>()?;
    let heads = (0..k)
        .map(|h| {
            (0..configs)
                .map(|j| episode_return(agent, env, Policy::Head(h), seed, j))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SwitchReport {
        env,
        seed,
        planning,
        heads,
    })
}

/// Write `switch.csv`, `switch_summary.txt` and one Δ histogram per head.
pub fn write_outputs(report: &SwitchReport, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(out)?;
    let mut files = vec![out.join("switch.csv"), out.join("switch_summary.txt")];
    std::fs::write(&files[0], report.to_csv())?;
    std::fs::write(&files[1], report.summary())?;
    for (k, d) in report.deltas().iter().enumerate() {
        let p = out.join(format!("delta_head{k}.svg"));
        let title = format!("planning minus head {k} return");
        std::fs::write(&p, svg::histogram(&title, "return difference", d, 30, k))?;
        files.push(p);
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skew_of_known_samples() {
        assert_eq!(skewness(&[1.0, 1.0, 1.0]), 0.0);
        assert!(skewness(&[-1.0, 0.0, 1.0]).abs() < 1e-15);
        // {0, 0, 3}: mean 1, m2 = 2, m3 = 2, skew = 2 / 2^1.5
        assert!((skewness(&[0.0, 0.0, 3.0]) - 2.0 / 2f64.powf(1.5)).abs() < 1e-12);
    }

    #[test]
    fn config_streams_differ_from_plan_streams() {
        use rand::RngCore;
        let a = config_rng(3, 5).next_u64();
        assert_eq!(a, config_rng(3, 5).next_u64());
        assert_ne!(a, plan_rng(3, 5).next_u64());
        assert_ne!(a, config_rng(3, 6).next_u64());
    }

    #[test]
    fn report_arithmetic() {
        let r = SwitchReport {
            env: EnvKind::Collect,
            seed: 0,
            planning: vec![1.0, 0.0, 1.0],
            heads: vec![vec![0.0, 0.0, 1.0], vec![1.0, 1.0, 1.0]],
        };
        assert_eq!(r.deltas(), vec![vec![1.0, 0.0, 0.0], vec![0.0, -1.0, 0.0]]);
        assert_eq!(r.best_head().0, 1);
        // planning 2/3 vs best 1 with stderr 0
        assert!(!r.planning_not_worse());
        assert!(r.to_csv().starts_with("config,planning,head0,head1\n0,1,0,1\n"));
    }
}
