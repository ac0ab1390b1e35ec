//! Learning curves from per-seed metric CSVs: one SVG per metric, one mean
//! line and stderr band per agent.

use std::path::{Path, PathBuf};

use crate::metrics::{aggregate_column, shared_columns, MetricsTable};
use crate::svg::{line_plot, Series};
use crate::CliError;

/// Per-seed tables of one agent.
#[derive(Clone, Debug)]
pub struct AgentCurves {
    pub label: String,
    pub tables: Vec<MetricsTable>,
}

/// Label for a CSV path: an explicit `label=path`, else the run directory of
/// `<run>/seed_<n>/metrics.csv`, else the file stem.
pub fn label_for(arg: &str) -> (String, PathBuf) {
    if let Some((l, p)) = arg.split_once('=') {
        return (l.to_string(), PathBuf::from(p));
    }
    let p = PathBuf::from(arg);
    let parent = p.parent();
    let in_seed_dir = parent
        .and_then(|d| d.file_name())
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.starts_with("seed_"));
    let label = if in_seed_dir {
        parent.and_then(Path::parent).and_then(|d| d.file_name())
    } else {
        p.file_stem()
    };
    (label.and_then(|s| s.to_str()).unwrap_or("run").to_string(), p)
}

/// Group CSV arguments by label, keeping first-seen order.
pub fn load_groups(args: &[String]) -> Result<Vec<AgentCurves>, CliError> {
    let mut groups: Vec<AgentCurves> = Vec::new();
    for a in args {
        let (label, path) = label_for(a);
        let t = MetricsTable::read(&path)?;
        t.require_metric_schema(&path.display().to_string())?;
        match groups.iter_mut().find(|g| g.label == label) {
            Some(g) => g.tables.push(t),
            None => groups.push(AgentCurves { label, tables: vec![t] }),
        }
    }
    Ok(groups)
}

/// Metrics present in every table of every agent.
pub fn common_metrics(groups: &[AgentCurves]) -> Vec<String> {
    let all: Vec<MetricsTable> = groups.iter().flat_map(|g| g.tables.iter().cloned()).collect();
    shared_columns(&all)
}

/// Write one `<metric>.svg` per common metric into `out`.
pub fn plot(groups: &[AgentCurves], out: &Path) -> Result<Vec<PathBuf>, CliError> {
    if groups.is_empty() {
        return Err(CliError::Other("no input CSVs".into()));
    }
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for metric in common_metrics(groups) {
        let series: Vec<Series> = groups
            .iter()
            .map(|g| Series {
                label: g.label.clone(),
                points: aggregate_column(&g.tables, &metric)
                    .into_iter()
                    .map(|(s, m, e, _)| (s, m, e))
                    .collect(),
            })
            .collect();
        let svg = line_plot(&metric, "environment steps", &metric, &series);
        let path = out.join(format!("{metric}.svg"));
        std::fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}
