use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::run::{mean_std, RunSummary};
use crate::error::{Error, Result};

/// One long-format row: `task, m, t, epsilon, frequentist, seed, metric, value`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub task: String,
    pub m: usize,
    pub t: f64,
    pub epsilon: f64,
    pub frequentist: bool,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// `(task, m, t, epsilon, frequentist, metric)`.
type GroupKey = (String, usize, String, String, bool, String);

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub warnings: Vec<String>,
}

/// Reads `metrics.json` from each directory. Unreadable directories are skipped with a warning.
pub fn collect(dirs: &[PathBuf]) -> Result<Report> {
    if dirs.is_empty() {
        return Err(Error::config("report needs at least one output directory"));
    }
    let mut rep = Report::default();
    for dir in dirs {
        match load(dir) {
            Ok(summary) => {
                for run in &summary.runs {
                    if run.metrics.is_empty() {
                        rep.warnings.push(format!(
                            "{}: run (cell {}, seed {}) has no metrics, skipped",
                            dir.display(),
                            run.cell,
                            run.seed
                        ));
                    }
                    for (metric, &value) in &run.metrics {
                        rep.rows.push(ReportRow {
                            task: summary.task.name().to_string(),
                            m: run.m,
                            t: run.t,
                            epsilon: run.epsilon,
                            frequentist: run.frequentist,
                            seed: run.seed,
                            metric: metric.clone(),
                            value,
                        });
                    }
                }
            }
            Err(e) => rep
                .warnings
                .push(format!("{}: {e}, skipped", dir.display())),
        }
    }
    Ok(rep)
}

fn load(dir: &Path) -> Result<RunSummary> {
    let path = dir.join("metrics.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

impl Report {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record([
            "task",
            "m",
            "t",
            "epsilon",
            "frequentist",
            "seed",
            "metric",
            "value",
        ])
        .map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.task.as_str(),
                &r.m.to_string(),
                &r.t.to_string(),
                &r.epsilon.to_string(),
                &r.frequentist.to_string(),
                &r.seed.to_string(),
                &r.metric,
                &r.value.to_string(),
            ])
            .map_err(io)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Mean and sample std over seeds for every configuration and metric.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut groups: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            groups
                .entry((
                    r.task.clone(),
                    r.m,
                    format!("{}", r.t),
                    format!("{}", r.epsilon),
                    r.frequentist,
                    r.metric.clone(),
                ))
                .or_default()
                .push(r.value);
        }
        groups
            .into_iter()
            .map(|((task, m, t, epsilon, frequentist, metric), vals)| {
                let (mean, std) = mean_std(&vals);
                AggregateRow {
                    task,
                    m,
                    t,
                    epsilon,
                    frequentist,
                    metric,
                    mean,
                    std,
                    count: vals.len(),
                }
            })
            .collect()
    }

    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<24} {:>4} {:>6} {:>6} {:>5} {:<20} {:>12} {:>12} {:>5}\n",
            "task", "m", "t", "eps", "freq", "metric", "mean", "std", "n"
        );
        for a in self.aggregate() {
            s.push_str(&format!(
                "{:<24} {:>4} {:>6} {:>6} {:>5} {:<20} {:>12.6} {:>12.6} {:>5}\n",
                a.task, a.m, a.t, a.epsilon, a.frequentist, a.metric, a.mean, a.std, a.count
            ));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub task: String,
    pub m: usize,
    pub t: String,
    pub epsilon: String,
    pub frequentist: bool,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}
