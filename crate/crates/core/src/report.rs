//! Run reports: structured and human renderings, integrity checks, comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::suite::{aggregate, Aggregate, Category, TestResult};
use crate::types::Task;

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("report integrity check failed: {0}")]
    Integrity(String),
    #[error("reports are not comparable: {0}")]
    Incomparable(String),
    #[error("cannot parse report: {0}")]
    Parse(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub seed: u64,
    pub registry_hash: String,
    /// Absent when registry thresholds were applied as-is.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_table_hash: Option<String>,
    pub datasets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub model_id: String,
    pub environment: Environment,
    pub tasks: Vec<Task>,
    pub results: Vec<TestResult>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Structured,
    Human,
}

impl RunReport {
    pub fn new(model_id: impl Into<String>, environment: Environment, tasks: Vec<Task>, results: Vec<TestResult>) -> Self {
        let aggregate = aggregate(&results);
        Self {
            version: REPORT_VERSION,
            model_id: model_id.into(),
            environment,
            tasks,
            results,
            aggregate,
        }
    }

    /// Check that every stored fraction and aggregate follows from the instances.
    pub fn check_integrity(&self) -> Result<(), ReportError> {
        for r in &self.results {
            if r.pass_fraction != r.recompute_pass_fraction() {
                return Err(ReportError::Integrity(format!(
                    "pass fraction of `{}` does not match its instances",
                    r.spec_id
                )));
            }
            if !self.tasks.contains(&r.task) {
                return Err(ReportError::Integrity(format!("`{}` belongs to an unlisted task", r.spec_id)));
            }
        }
        if aggregate(&self.results) != self.aggregate {
            return Err(ReportError::Integrity("aggregates do not match the test results".into()));
        }
        Ok(())
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, ReportError> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

fn pct(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{:.1}%", 100.0 * v),
        None => "n/a".into(),
    }
}

/// Render a report after verifying its integrity.
pub fn render_report(report: &RunReport, format: Format) -> Result<Vec<u8>, ReportError> {
    report.check_integrity()?;
    match format {
        Format::Structured => {
            let mut s = serde_json::to_vec_pretty(report)?;
            s.push(b'\n');
            Ok(s)
        }
        Format::Human => Ok(render_human(report).into_bytes()),
    }
}

fn render_human(r: &RunReport) -> String {
    let a = &r.aggregate;
    let mut s = String::new();
    let _ = writeln!(s, "# Test report: {}", r.model_id);
    let _ = writeln!(s);
    let _ = writeln!(s, "- seed: {}", r.environment.seed);
    let _ = writeln!(s, "- registry: {}", r.environment.registry_hash);
    let _ = writeln!(
        s,
        "- thresholds: {}",
        r.environment.threshold_table_hash.as_deref().unwrap_or("registry defaults")
    );
    let _ = writeln!(s, "- datasets: {}", r.environment.datasets.join(", "));
    let _ = writeln!(s, "- overall: {}", pct(a.overall));
    let _ = writeln!(s);
    let _ = writeln!(s, "| task | correctness | fairness | robustness | average |");
    let _ = writeln!(s, "|---|---|---|---|---|");
    for t in &r.tasks {
        let cats = a.categories.get(t);
        let c = |k: Category| pct(cats.and_then(|m| m.get(&k).copied()));
        let _ = writeln!(
            s,
            "| {t} | {} | {} | {} | {} |",
            c(Category::Correctness),
            c(Category::Fairness),
            c(Category::Robustness),
            pct(a.tasks.get(t).copied())
        );
    }
    for t in &r.tasks {
        let _ = writeln!(s);
        let _ = writeln!(s, "## {t}");
        let _ = writeln!(s);
        let _ = writeln!(s, "| category | test | passed | failed | skipped | pass fraction |");
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        for ts in a.tests.iter().filter(|x| x.task == *t) {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} |",
                ts.category,
                ts.test,
                ts.passed,
                ts.failed,
                ts.skipped,
                pct(ts.pass_fraction)
            );
        }
    }
    s
}

/// Score differences between two comparable reports (`b` minus `a`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportDiff {
    pub tasks: BTreeMap<Task, Option<f64>>,
    pub categories: BTreeMap<(Task, Category), Option<f64>>,
    pub overall: Option<f64>,
}

fn delta(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(b? - a?)
}

/// Compare two reports; refuses when registry or threshold hashes differ.
pub fn compare(a: &RunReport, b: &RunReport) -> Result<ReportDiff, ReportError> {
    a.check_integrity()?;
    b.check_integrity()?;
    if a.environment.registry_hash != b.environment.registry_hash {
        return Err(ReportError::Incomparable(format!(
            "registry hash {} vs {}",
            a.environment.registry_hash, b.environment.registry_hash
        )));
    }
    if a.environment.threshold_table_hash != b.environment.threshold_table_hash {
        return Err(ReportError::Incomparable(format!(
            "threshold table hash {:?} vs {:?}",
            a.environment.threshold_table_hash, b.environment.threshold_table_hash
        )));
    }
    let mut tasks = BTreeMap::new();
    let mut categories = BTreeMap::new();
    for t in a.tasks.iter().chain(&b.tasks) {
        tasks.insert(*t, delta(a.aggregate.tasks.get(t).copied(), b.aggregate.tasks.get(t).copied()));
        for c in [Category::Correctness, Category::Fairness, Category::Robustness] {
            let get = |r: &RunReport| r.aggregate.categories.get(t).and_then(|m| m.get(&c)).copied();
            categories.insert((*t, c), delta(get(a), get(b)));
        }
    }
    Ok(ReportDiff {
        tasks,
        categories,
        overall: delta(a.aggregate.overall, b.aggregate.overall),
    })
}

pub fn render_diff(a: &RunReport, b: &RunReport, d: &ReportDiff) -> String {
    let sign = |x: Option<f64>| match x {
        Some(v) => format!("{:+.1} pts", 100.0 * v),
        None => "n/a".into(),
    };
    let mut s = String::new();
    let _ = writeln!(s, "{} -> {}", a.model_id, b.model_id);
    let _ = writeln!(s, "overall: {} -> {} ({})", pct(a.aggregate.overall), pct(b.aggregate.overall), sign(d.overall));
    for (t, v) in &d.tasks {
        let _ = writeln!(s, "{t}: {}", sign(*v));
        for c in [Category::Correctness, Category::Fairness, Category::Robustness] {
            if let Some(x) = d.categories.get(&(*t, c)) {
                let _ = writeln!(s, "  {c}: {}", sign(*x));
            }
        }
    }
    s
}
