//! Roll test results up into category, task and overall scores.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::evaluate::TestResult;
use super::registry::Category;
use crate::types::Task;

/// All instances of one test name for one task, pooled over metrics and datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub task: Task,
    pub category: Category,
    pub test: String,
    pub passed: usize,
    pub failed: usize,
    pub skipped: usize,
    pub pass_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub tests: Vec<TestSummary>,
    pub categories: BTreeMap<Task, BTreeMap<Category, f64>>,
    pub tasks: BTreeMap<Task, f64>,
    pub overall: Option<f64>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Aggregate results.
///
/// Tests with no scored instance are left out of the means. The output does
/// not depend on the order of `results`.
pub fn aggregate(results: &[TestResult]) -> Aggregate {
    let mut by_test: BTreeMap<(Task, Category, String), (usize, usize, usize)> = BTreeMap::new();
    for r in results {
        let (p, f, s) = r.counts();
        let e = by_test.entry((r.task, r.category, r.test.clone())).or_default();
        e.0 += p;
        e.1 += f;
        e.2 += s;
    }
    let tests: Vec<TestSummary> = by_test
        .into_iter()
        .map(|((task, category, test), (passed, failed, skipped))| TestSummary {
            task,
            category,
            test,
            passed,
            failed,
            skipped,
            pass_fraction: (passed + failed > 0).then(|| passed as f64 / (passed + failed) as f64),
        })
        .collect();

    let mut cat_scores: BTreeMap<Task, BTreeMap<Category, Vec<f64>>> = BTreeMap::new();
    for t in &tests {
        if let Some(f) = t.pass_fraction {
            cat_scores.entry(t.task).or_default().entry(t.category).or_default().push(f);
        }
    }
    let categories: BTreeMap<Task, BTreeMap<Category, f64>> = cat_scores
        .into_iter()
        .map(|(task, cats)| {
            let cats = cats
                .into_iter()
                .filter_map(|(c, v)| mean(v).map(|m| (c, m)))
                .collect();
            (task, cats)
        })
        .collect();
    let tasks: BTreeMap<Task, f64> = categories
        .iter()
        .filter_map(|(t, cats)| mean(cats.values().copied()).map(|m| (*t, m)))
        .collect();
    let overall = mean(tasks.values().copied());
    Aggregate {
        tests,
        categories,
        tasks,
        overall,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::suite::evaluate::Instance;
    use crate::suite::registry::{Comparison, MetricId};

    fn result(task: Task, category: Category, test: &str, outcomes: &[Option<bool>]) -> TestResult {
        let instances = outcomes
            .iter()
            .enumerate()
            .map(|(i, o)| Instance {
                dataset: "d".into(),
                key: i.to_string(),
                value: o.map(|_| 0.0),
                threshold: 0.0,
                passed: o.unwrap_or(false),
                skipped: o.is_none(),
                skip_reason: None,
            })
            .collect();
        let mut r = TestResult {
            spec_id: format!("{test}.{i}", i = outcomes.len()),
            test: test.into(),
            category,
            task,
            metric: MetricId::Ccc,
            comparison: Comparison::Greater,
            threshold: 0.0,
            instances,
            pass_fraction: None,
        };
        r.pass_fraction = r.recompute_pass_fraction();
        r
    }

    #[test]
    fn hand_computed() {
        let rs = vec![
            result(Task::Valence, Category::Correctness, "a", &[Some(true), Some(false)]),
            result(Task::Valence, Category::Correctness, "a", &[Some(true), None]),
            result(Task::Valence, Category::Correctness, "b", &[Some(false)]),
            result(Task::Valence, Category::Fairness, "c", &[Some(true)]),
            result(Task::Arousal, Category::Robustness, "d", &[None]),
            result(Task::Arousal, Category::Correctness, "e", &[Some(true), Some(true), Some(false), Some(false)]),
        ];
        let a = aggregate(&rs);
        // a: 2/3, b: 0 -> correctness 1/3; fairness 1 -> valence 2/3
        let v = a.tasks[&Task::Valence];
        assert!((v - 2.0 / 3.0).abs() < 1e-12);
        assert!((a.tasks[&Task::Arousal] - 0.5).abs() < 1e-12);
        assert!((a.overall.unwrap() - (2.0 / 3.0 + 0.5) / 2.0).abs() < 1e-12);
        let d = a.tests.iter().find(|t| t.test == "d").unwrap();
        assert_eq!(d.pass_fraction, None);
        assert_eq!(d.skipped, 1);
        assert!(!a.categories[&Task::Arousal].contains_key(&Category::Robustness));
    }

    #[test]
    fn empty() {
        assert_eq!(aggregate(&[]).overall, None);
    }
}
