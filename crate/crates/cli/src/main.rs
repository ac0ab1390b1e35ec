use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use grasp_cli::config::ExperimentConfig;
use grasp_cli::visualize::{GridSpec, Lattice, Layout};
use grasp_cli::{experiment, plot, switch, visualize, CliError};

#[derive(Parser)]
#[command(name = "grasp", about = "Train and analyse gradient-based affordance selection agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment config.
    Run {
        config: PathBuf,
        /// Validate and print the resolved parameters without training.
        #[arg(long)]
        dry_run: bool,
        /// One trainer thread per seed.
        #[arg(long)]
        parallel_seeds: bool,
        /// Override a key, e.g. `--set afford.K=3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Learning curves (one SVG per metric) from per-seed metric CSVs.
    /// Arguments are paths or `label=path`.
    Plot {
        csvs: Vec<String>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
    /// Roll out each affordance head from a lattice of start states.
    VisualizeAffordances {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Start-state lattice, COLSxROWS.
        #[arg(long, default_value = "3x3")]
        grid: Lattice,
        #[arg(long, default_value = "fixed")]
        layout: Layout,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value = "affordances")]
        out: PathBuf,
    },
    /// Planning policy against each head as a policy on shared configurations.
    SwitchAnalysis {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "switch")]
        out: PathBuf,
    },
    /// Finite-difference check of every op, network and the planner objective.
    Gradcheck {
        /// Random instances per primitive op.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

fn parse_overrides(items: &[String]) -> Result<Vec<(String, String)>, CliError> {
    items
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| {
                    CliError::Config(grasp_cli::config::ConfigError {
                        issues: vec![format!("--set {s}: expected KEY=VALUE")],
                    })
                })
        })
        .collect()
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run {
            config,
            dry_run,
            parallel_seeds,
            overrides,
        } => {
            let cfg = ExperimentConfig::load(&config, &parse_overrides(&overrides)?)?;
            print!("{}", cfg.raw.table());
            if dry_run {
                return Ok(());
            }
            let t0 = Instant::now();
            let outcome = experiment::run(&cfg, parallel_seeds)?;
            for (seed, s) in &outcome.summaries {
                let last = s.last_eval();
                println!(
                    "seed {seed}: {} updates, {} target syncs, final eval return {}, success {}",
                    s.updates,
                    s.syncs,
                    last.map(|e| e.mean_return.to_string()).unwrap_or_else(|| "-".into()),
                    last.map(|e| e.success_rate.to_string()).unwrap_or_else(|| "-".into())
                );
            }
            println!(
                "wrote {} in {:.1}s",
                outcome.aggregate.display(),
                t0.elapsed().as_secs_f64()
            );
        }
        Command::Plot { csvs, out } => {
            let groups = plot::load_groups(&csvs)?;
            for p in plot::plot(&groups, &out)? {
                println!("{}", p.display());
            }
        }
        Command::VisualizeAffordances {
            config,
            checkpoint,
            grid,
            layout,
            seed,
            delta,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config, &[])?;
            let agent = experiment::load_agent(&cfg, &checkpoint)?;
            let spec = GridSpec {
                lattice: grid,
                layout,
                seed,
                delta,
            };
            let rollouts = visualize::rollout_heads(&agent, cfg.train.env, &spec)?;
            for p in visualize::write_outputs(&rollouts, layout, agent.cfg.k, &out)? {
                println!("{}", p.display());
            }
            println!(
                "injective endpoint match (delta {delta}): {:.3} of {} starts",
                visualize::injective_fraction(&rollouts, delta),
                rollouts.len()
            );
        }
        Command::SwitchAnalysis {
            config,
            checkpoint,
            episodes,
            seed,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config, &[])?;
            let agent = experiment::load_agent(&cfg, &checkpoint)?;
            let report = switch::switch_analysis(&agent, cfg.train.env, episodes, seed)?;
            switch::write_outputs(&report, &out)?;
            print!("{}", report.summary());
        }
        Command::Gradcheck { seeds } => {
            let t0 = Instant::now();
            let entries = grasp::gradcheck::run_suite(seeds)?;
            let mut failed = 0;
            for e in &entries {
                println!(
                    "{:<40} max rel err {:.3e} (tol {:.0e}) {}",
                    e.name,
                    e.max_rel_error,
                    e.tolerance,
                    if e.passed() { "ok" } else { "FAIL" }
                );
                failed += usize::from(!e.passed());
            }
            println!("{} checks, {failed} failed, {:.1}s", entries.len(), t0.elapsed().as_secs_f64());
            if failed > 0 {
                return Err(CliError::Core(grasp::Error::NonFinite(format!(
                    "{failed} gradient checks exceeded tolerance"
                ))));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
