//! Fairness threshold resolution and the calibration table.

use std::collections::BTreeSet;
use std::sync::Mutex;

use crate::fairness_sim::{simulate_threshold, FairnessMetric, RandomModel, SimError, ThresholdEntry, ThresholdTable};
use crate::types::{GroupPartition, Label, Task};

use super::registry::{Category, Registry};

/// Shipped table: registry thresholds at their calibration settings, with the
/// raw simulated value alongside.
pub const BUILTIN_TABLE: &str = include_str!("../../data/thresholds.tsv");

pub fn builtin_table() -> ThresholdTable {
    ThresholdTable::read(BUILTIN_TABLE.as_bytes()).expect("builtin threshold table parses")
}

/// Random truth model that best describes a pooled gold distribution.
///
/// Dimensions use the truncated Gaussian. Categories use the sparse model when
/// the rarest class falls under 10% (and there are four classes), otherwise uniform.
pub fn truth_model_for(task: Task, gold: &[Label], classes: &[String]) -> RandomModel {
    if task.is_dimensional() {
        return RandomModel::gaussian();
    }
    let n = gold.len().max(1) as f64;
    let min_prop = classes
        .iter()
        .map(|c| gold.iter().filter(|l| l.as_class() == Some(c.as_str())).count() as f64 / n)
        .fold(f64::INFINITY, f64::min);
    if classes.len() == 4 && min_prop < 0.1 {
        RandomModel::sparse()
    } else {
        RandomModel::uniform(classes.len().max(2))
    }
}

/// Threshold for a metric on an actual partition.
///
/// Looks the key up in `table` (largest tabulated group size not above the
/// actual one); on a miss simulates it and caches the result in the table.
pub fn resolve_fairness_threshold(
    metric: FairnessMetric,
    partition: &GroupPartition,
    truth: Option<&RandomModel>,
    table: &Mutex<ThresholdTable>,
    repeats: usize,
    seed: u64,
) -> Result<f64, SimError> {
    let model = metric.default_model();
    let model_key = model.to_string();
    let truth = if metric.needs_truth() { truth } else { None };
    let truth_key = truth.map(ToString::to_string);
    let n_groups = partition.n_groups();
    let spg = partition.min_group_size();
    {
        let t = table.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(e) = t.lookup(metric, n_groups, spg, &model_key, truth_key.as_deref()) {
            return Ok(e.threshold);
        }
    }
    let simulated = simulate_threshold(metric, n_groups, spg, &model, truth, repeats, seed)?;
    let mut t = table.lock().unwrap_or_else(|e| e.into_inner());
    t.insert(ThresholdEntry {
        metric,
        n_groups,
        samples_per_group: spg,
        model: model_key,
        truth: truth_key,
        threshold: simulated,
        simulated,
        repeats,
        seed,
    });
    Ok(simulated)
}

/// Simulate every calibrated fairness row of `registry`.
///
/// Truth-dependent categorical metrics get one entry per truth model
/// (uniform and sparse). The applied threshold is the registry value.
pub fn calibration_table(registry: &Registry, repeats: usize, seed: u64) -> Result<ThresholdTable, SimError> {
    let mut keys = BTreeSet::new();
    let mut rows = Vec::new();
    for spec in &registry.specs {
        let (Some(metric), Some(cal)) = (spec.metric.simulated(spec.category), spec.calibration) else { continue };
        if spec.category != Category::Fairness {
            continue;
        }
        let truths: Vec<Option<RandomModel>> = if !metric.needs_truth() {
            vec![None]
        } else if metric.is_categorical() {
            vec![Some(RandomModel::uniform(4)), Some(RandomModel::sparse())]
        } else {
            vec![Some(RandomModel::gaussian())]
        };
        for truth in truths {
            let key = (metric.id(), cal.n_groups, cal.samples_per_group, truth.as_ref().map(ToString::to_string));
            if keys.insert(key) {
                rows.push((metric, cal, truth, spec.threshold));
            }
        }
    }
    let mut table = ThresholdTable::default();
    for (metric, cal, truth, threshold) in rows {
        let model = metric.default_model();
        let simulated = simulate_threshold(
            metric,
            cal.n_groups,
            cal.samples_per_group,
            &model,
            truth.as_ref(),
            repeats,
            seed,
        )?;
        table.insert(ThresholdEntry {
            metric,
            n_groups: cal.n_groups,
            samples_per_group: cal.samples_per_group,
            model: model.to_string(),
            truth: truth.as_ref().map(ToString::to_string),
            threshold,
            simulated,
            repeats,
            seed,
        });
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::suite::registry::Registry;
    use std::collections::BTreeMap;

    fn partition(n_groups: usize, size: usize) -> GroupPartition {
        GroupPartition {
            attribute: "g".into(),
            groups: (0..n_groups)
                .map(|g| (format!("g{g}"), (0..size).map(|i| format!("{g}-{i}")).collect()))
                .collect::<BTreeMap<_, _>>(),
            excluded: vec![],
        }
    }

    #[test]
    fn builtin_table_covers_calibrated_rows() {
        let table = builtin_table();
        let reg = Registry::builtin();
        for spec in &reg.specs {
            let (Some(metric), Some(cal)) = (spec.metric.simulated(spec.category), spec.calibration) else { continue };
            let truth = metric.needs_truth().then(|| {
                if metric.is_categorical() {
                    RandomModel::uniform(4)
                } else {
                    RandomModel::gaussian()
                }
            });
            let e = table
                .lookup(
                    metric,
                    cal.n_groups,
                    cal.samples_per_group,
                    &metric.default_model().to_string(),
                    truth.as_ref().map(ToString::to_string).as_deref(),
                )
                .unwrap_or_else(|| panic!("missing {}", spec.id));
            assert_eq!(e.threshold, spec.threshold, "{}", spec.id);
        }
    }

    #[test]
    fn resolve_uses_table_then_caches_simulation() {
        let table = Mutex::new(builtin_table());
        let t = resolve_fairness_threshold(FairnessMetric::DiffMean, &partition(6, 2000), None, &table, 50, 1).unwrap();
        assert_eq!(t, 0.03);
        let t = resolve_fairness_threshold(FairnessMetric::RelDiffPerClass, &partition(31, 75), None, &table, 50, 1)
            .unwrap();
        assert_eq!(t, 0.225);
        let before = table.lock().unwrap().entries.len();
        let small = partition(2, 40);
        let t1 = resolve_fairness_threshold(FairnessMetric::DiffMean, &small, None, &table, 50, 1).unwrap();
        assert_eq!(table.lock().unwrap().entries.len(), before + 1);
        let t2 = resolve_fairness_threshold(FairnessMetric::DiffMean, &small, None, &table, 50, 1).unwrap();
        assert_eq!(t1, t2);
        assert!(t1 > 0.0);
    }

    #[test]
    fn truth_model_choice() {
        let classes: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let balanced: Vec<Label> = (0..40).map(|i| Label::class(classes[i % 4].clone())).collect();
        assert_eq!(truth_model_for(Task::Categories, &balanced, &classes), RandomModel::uniform(4));
        let mut skewed: Vec<Label> = (0..95).map(|_| Label::class("a")).collect();
        skewed.extend((0..5).map(|_| Label::class("b")));
        assert_eq!(truth_model_for(Task::Categories, &skewed, &classes), RandomModel::sparse());
        assert_eq!(truth_model_for(Task::Valence, &[], &classes), RandomModel::gaussian());
    }
}
