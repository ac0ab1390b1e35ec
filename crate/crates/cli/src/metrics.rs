//! Reading metric CSVs and aggregating them across seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use grasp::trainer::METRIC_COLUMNS;

/// A numeric CSV with a header; empty fields are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error("{file}: line {line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("{0}")]
    Schema(String),
}

impl MetricsTable {
    pub fn parse(text: &str, source: &str) -> Result<Self, TableError> {
        let mut lines = text.lines();
        let header: Vec<String> = match lines.next() {
            Some(h) => h.split(',').map(|s| s.trim().to_string()).collect(),
            None => {
                return Err(TableError::Parse {
                    file: source.into(),
                    line: 1,
                    msg: "empty file".into(),
                })
            }
        };
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != header.len() {
                return Err(TableError::Parse {
                    file: source.into(),
                    line: i + 2,
                    msg: format!("{} fields, header has {}", fields.len(), header.len()),
                });
            }
            let row = fields
                .iter()
                .map(|f| {
                    let f = f.trim();
                    if f.is_empty() {
                        Ok(None)
                    } else {
                        f.parse::<f64>().map(Some).map_err(|e| TableError::Parse {
                            file: source.into(),
                            line: i + 2,
                            msg: format!("`{f}`: {e}"),
                        })
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        Ok(MetricsTable { header, rows })
    }

    pub fn read(path: &Path) -> Result<Self, TableError> {
        let text = std::fs::read_to_string(path).map_err(|e| TableError::Io(path.display().to_string(), e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Check that this is a training-metrics table.
    pub fn require_metric_schema(&self, source: &str) -> Result<(), TableError> {
        for c in METRIC_COLUMNS.iter().chain(&["eval_return", "eval_success"]) {
            if self.column(c).is_none() {
                return Err(TableError::Schema(format!("{source}: missing column `{c}`")));
            }
        }
        Ok(())
    }

    /// `(step, value)` pairs of `name` where present.
    pub fn series(&self, name: &str) -> Vec<(f64, f64)> {
        let (Some(s), Some(c)) = (self.column("step"), self.column(name)) else {
            return Vec::new();
        };
        self.rows
            .iter()
            .filter_map(|r| Some((r[s]?, r[c]?)))
            .collect()
    }
}

/// Mean and standard error of the mean (sample standard deviation over
/// `sqrt(n)`; zero for a single value).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Per-step `(mean, stderr, n)` of `column` across tables.
pub fn aggregate_column(tables: &[MetricsTable], column: &str) -> Vec<(f64, f64, f64, usize)> {
    let mut by_step: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for t in tables {
        for (s, v) in t.series(column) {
            by_step.entry(s as u64).or_default().push(v);
        }
    }
    by_step
        .into_iter()
        .map(|(s, v)| {
            let (m, e) = mean_stderr(&v);
            (s as f64, m, e, v.len())
        })
        .collect()
}

/// Columns shared by every table, in the first table's order, without `step`.
pub fn shared_columns(tables: &[MetricsTable]) -> Vec<String> {
    let Some(first) = tables.first() else {
        return Vec::new();
    };
    first
        .header
        .iter()
        .filter(|h| *h != "step" && tables.iter().all(|t| t.column(h).is_some()))
        .cloned()
        .collect()
}

/// `step,<c>_mean,<c>_stderr,<c>_n,...` over the shared columns.
pub fn aggregate_csv(tables: &[MetricsTable]) -> String {
    let cols = shared_columns(tables);
    let mut steps: BTreeMap<u64, Vec<Option<(f64, f64, usize)>>> = BTreeMap::new();
    for (i, c) in cols.iter().enumerate() {
        for (s, m, e, n) in aggregate_column(tables, c) {
            steps.entry(s as u64).or_insert_with(|| vec![None; cols.len()])[i] = Some((m, e, n));
        }
    }
    let mut out = String::from("step");
    for c in &cols {
        let _ = write!(out, ",{c}_mean,{c}_stderr,{c}_n");
    }
    out.push('\n');
    for (s, vals) in steps {
        let _ = write!(out, "{s}");
        for v in vals {
            match v {
                Some((m, e, n)) => {
                    let _ = write!(out, ",{m},{e},{n}");
                }
                None => out.push_str(",,,0"),
            }
        }
        out.push('\n');
    }
    out
}
