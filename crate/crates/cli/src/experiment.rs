//! Multi-seed experiment runs: one trainer per seed, per-seed metric CSVs and
//! a mean ± stderr aggregate.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use grasp::trainer::{MetricsRow, RunSummary, Trainer};

use crate::config::ExperimentConfig;
use crate::metrics::{aggregate_csv, MetricsTable};
use crate::CliError;

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed_{seed}"))
}

/// Train one seed, streaming `metrics.csv` and checkpoints into its directory.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<RunSummary, CliError> {
    let dir = seed_dir(&cfg.output_dir, seed);
    std::fs::create_dir_all(&dir)?;
    let mut out = BufWriter::new(File::create(dir.join("metrics.csv"))?);
    writeln!(out, "{}", MetricsRow::header(cfg.agent.k))?;
    let mut trainer = Trainer::new(cfg.agent.clone(), cfg.train.clone(), seed)?.with_checkpoints(dir.clone());
    let summary = trainer.run(&mut |row| {
        writeln!(out, "{}", row.to_csv())?;
        out.flush()
    })?;
    out.flush()?;
    Ok(summary)
}

/// Results of a whole run, in seed order.
#[derive(Debug)]
pub struct RunOutcome {
    pub summaries: Vec<(u64, RunSummary)>,
    pub aggregate: PathBuf,
}

/// Write the resolved configuration, train every seed (sequentially or one
/// thread per seed) and aggregate the per-seed CSVs.
pub fn run(cfg: &ExperimentConfig, parallel: bool) -> Result<RunOutcome, CliError> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("config.txt"), cfg.raw.table())?;
    let results: Vec<Result<RunSummary, CliError>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = cfg.seeds.iter().map(|&seed| s.spawn(move || run_seed(cfg, seed))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(CliError::Other("trainer thread panicked".into()))))
                .collect()
        })
    } else {
        cfg.seeds.iter().map(|&seed| run_seed(cfg, seed)).collect()
    };
    let mut summaries = Vec::with_capacity(results.len());
    for (seed, r) in cfg.seeds.iter().zip(results) {
        summaries.push((*seed, r?));
    }
    let aggregate = write_aggregate(cfg)?;
    Ok(RunOutcome { summaries, aggregate })
}

/// Aggregate the per-seed CSVs of `cfg` into `aggregate.csv`.
pub fn write_aggregate(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let tables = cfg
        .seeds
        .iter()
        .map(|&s| MetricsTable::read(&seed_dir(&cfg.output_dir, s).join("metrics.csv")))
        .collect::<Result<Vec<_>, _>>()?;
    let path = cfg.output_dir.join("aggregate.csv");
    std::fs::write(&path, aggregate_csv(&tables))?;
    Ok(path)
}

/// Rebuild the agent described by `cfg` and load `checkpoint` into it. A
/// checkpoint from another environment or architecture fails to load.
pub fn load_agent(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<grasp::agent::Agent, CliError> {
    let spec = cfg.train.env.build(cfg.agent.gamma).spec();
    let mut rng = grasp::trainer::stream(0, 0);
    let mut agent = grasp::agent::Agent::new(spec, cfg.agent.clone(), &mut rng)?;
    agent.load(checkpoint)?;
    Ok(agent)
}
