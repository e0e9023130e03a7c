use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::ranges::{constrained_categories, expected_range};
use super::registry::{Category, Comparison, Condition, Grouping, MetricId, TestSpec};
use super::thresholds::{resolve_fairness_threshold, truth_model_for};
use crate::fairness_sim::{balance_groups, n_min_bin, ThresholdTable, DEFAULT_REPEATS};
use crate::manifest::{partition_by_attribute, partition_by_pitch, CANONICAL_CLASSES};
use crate::metrics::{self, DisparityMode, SpeakerCriteria, SpeakerSummary};
use crate::perturb::{Operation, PerturbationSpec};
use crate::types::{attr, BinSpec, DatasetManifest, GroupPartition, Label, PredictionSet, Sample, Task};

/// Supplies model predictions for clean and perturbed data.
pub trait PredictionSource: Sync {
    fn clean(&self, dataset: &str, task: Task) -> Result<PredictionSet, String>;
    fn perturbed(&self, dataset: &str, task: Task, spec: &PerturbationSpec) -> Result<PredictionSet, String>;
}

/// Predictions held in memory; perturbed sets are keyed by spec fingerprint.
#[derive(Debug, Default, Clone)]
pub struct StaticSource {
    pub clean: BTreeMap<(String, Task), PredictionSet>,
    pub perturbed: BTreeMap<(String, Task, String), PredictionSet>,
}

impl StaticSource {
    pub fn insert_clean(&mut self, dataset: &str, set: PredictionSet) {
        self.clean.insert((dataset.to_string(), set.task), set);
    }

    pub fn insert_perturbed(&mut self, dataset: &str, spec: &PerturbationSpec, set: PredictionSet) {
        self.perturbed
            .insert((dataset.to_string(), set.task, spec.fingerprint()), set);
    }
}

impl PredictionSource for StaticSource {
    fn clean(&self, dataset: &str, task: Task) -> Result<PredictionSet, String> {
        self.clean
            .get(&(dataset.to_string(), task))
            .cloned()
            .ok_or_else(|| format!("no {task} predictions for dataset `{dataset}`"))
    }

    fn perturbed(&self, dataset: &str, task: Task, spec: &PerturbationSpec) -> Result<PredictionSet, String> {
        self.perturbed
            .get(&(dataset.to_string(), task, spec.fingerprint()))
            .cloned()
            .ok_or_else(|| format!("no {task} predictions for dataset `{dataset}` under {} perturbation", spec.kind()))
    }
}

/// One impulse response of a bound set.
#[derive(Debug, Clone, PartialEq)]
pub struct IrEntry {
    pub id: String,
    pub path: PathBuf,
    pub reference: bool,
}

pub const DEFAULT_BALANCE_TARGET: usize = 1000;

/// Data and settings shared by all test evaluations of a run.
#[derive(Debug)]
pub struct EvalContext {
    pub manifests: BTreeMap<String, DatasetManifest>,
    pub ir_sets: BTreeMap<String, Vec<IrEntry>>,
    /// When set, fairness thresholds are looked up (or simulated) for the
    /// actual group count and size instead of taken from the registry.
    pub thresholds: Option<Mutex<ThresholdTable>>,
    pub seed: u64,
    pub balance_target: usize,
    pub simulation_repeats: usize,
    pub classes: Vec<String>,
}

impl EvalContext {
    pub fn new(manifests: BTreeMap<String, DatasetManifest>) -> Self {
        Self {
            manifests,
            ir_sets: BTreeMap::new(),
            thresholds: None,
            seed: 0,
            balance_target: DEFAULT_BALANCE_TARGET,
            simulation_repeats: DEFAULT_REPEATS,
            classes: CANONICAL_CLASSES.iter().map(|c| c.to_string()).collect(),
        }
    }

    pub fn threshold_table(&self) -> Option<ThresholdTable> {
        self.thresholds
            .as_ref()
            .map(|t| t.lock().unwrap_or_else(|e| e.into_inner()).clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub dataset: String,
    pub key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    pub threshold: f64,
    pub passed: bool,
    pub skipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub spec_id: String,
    pub test: String,
    pub category: Category,
    pub task: Task,
    pub metric: MetricId,
    pub comparison: Comparison,
    pub threshold: f64,
    pub instances: Vec<Instance>,
    /// Passed over non-skipped instances; `None` when all were skipped.
    pub pass_fraction: Option<f64>,
}

impl TestResult {
    pub fn counts(&self) -> (usize, usize, usize) {
        let passed = self.instances.iter().filter(|i| !i.skipped && i.passed).count();
        let skipped = self.instances.iter().filter(|i| i.skipped).count();
        (passed, self.instances.len() - passed - skipped, skipped)
    }

    pub fn recompute_pass_fraction(&self) -> Option<f64> {
        let (passed, failed, _) = self.counts();
        (passed + failed > 0).then(|| passed as f64 / (passed + failed) as f64)
    }
}

struct Judge<'a> {
    dataset: &'a str,
    comparison: Comparison,
    threshold: f64,
}

impl Judge<'_> {
    fn score(&self, key: impl Into<String>, value: f64) -> Instance {
        Instance {
            dataset: self.dataset.to_string(),
            key: key.into(),
            value: Some(value),
            threshold: self.threshold,
            passed: self.comparison.passes(value, self.threshold),
            skipped: false,
            skip_reason: None,
        }
    }

    fn skip(&self, key: impl Into<String>, reason: impl Into<String>) -> Instance {
        Instance {
            dataset: self.dataset.to_string(),
            key: key.into(),
            value: None,
            threshold: self.threshold,
            passed: false,
            skipped: true,
            skip_reason: Some(reason.into()),
        }
    }
}

/// Evaluate one registry row on every bound dataset it names.
pub fn evaluate_test(spec: &TestSpec, ctx: &EvalContext, source: &dyn PredictionSource) -> TestResult {
    let mut instances = Vec::new();
    for ds in &spec.datasets {
        let Some(manifest) = ctx.manifests.get(ds) else { continue };
        let judge = Judge {
            dataset: ds,
            comparison: spec.comparison,
            threshold: spec.threshold,
        };
        let mut found = match spec.category {
            Category::Correctness => correctness(spec, ctx, &judge, manifest, source),
            Category::Fairness => fairness(spec, ctx, judge, manifest, source),
            Category::Robustness => robustness(spec, ctx, &judge, manifest, source),
        };
        found.sort_by(|a, b| a.key.cmp(&b.key));
        instances.extend(found);
    }
    let mut result = TestResult {
        spec_id: spec.id.clone(),
        test: spec.test.clone(),
        category: spec.category,
        task: spec.task,
        metric: spec.metric,
        comparison: spec.comparison,
        threshold: spec.threshold,
        instances,
        pass_fraction: None,
    };
    result.pass_fraction = result.recompute_pass_fraction();
    result
}

/// Evaluate all specs; results are ordered by (category, id).
pub fn run_suite(specs: &[TestSpec], ctx: &EvalContext, source: &dyn PredictionSource) -> Vec<TestResult> {
    #[cfg(feature = "parallel")]
    let mut results: Vec<TestResult> = {
        use rayon::prelude::*;
        specs.par_iter().map(|s| evaluate_test(s, ctx, source)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let mut results: Vec<TestResult> = specs.iter().map(|s| evaluate_test(s, ctx, source)).collect();
    results.sort_by(|a, b| (a.category, &a.spec_id).cmp(&(b.category, &b.spec_id)));
    results
}

struct Row<'a> {
    sample: &'a Sample,
    gold: &'a Label,
    pred: &'a Label,
}

/// Samples with a usable gold label and a prediction, in manifest order.
fn aligned<'a>(manifest: &'a DatasetManifest, task: Task, preds: &'a PredictionSet, classes: &[String]) -> Vec<Row<'a>> {
    manifest
        .samples
        .iter()
        .filter_map(|s| {
            let gold = s.gold.get(&task)?;
            if let Some(c) = gold.as_class() {
                if !classes.iter().any(|k| k == c) {
                    return None;
                }
            }
            let pred = preds.get(&s.id)?;
            Some(Row { sample: s, gold, pred })
        })
        .collect()
}

/// Recall and precision over the classes present in the truth.
///
/// A class that is never predicted has precision 0.
struct ClassScores {
    recall: BTreeMap<String, f64>,
    precision: BTreeMap<String, f64>,
    uar: f64,
    uap: f64,
}

fn class_scores(truth: &[&str], pred: &[&str], classes: &[String]) -> Result<ClassScores, String> {
    let mut all: Vec<String> = classes.to_vec();
    for p in pred.iter().chain(truth) {
        if !all.iter().any(|c| c == p) {
            all.push(p.to_string());
        }
    }
    let cm = metrics::class_metrics(truth, pred, &all.iter().map(String::as_str).collect::<Vec<_>>())
        .map_err(|e| e.to_string())?;
    Ok(ClassScores {
        recall: cm.recall_per_class,
        precision: cm.precision_per_class,
        uar: cm.uar,
        uap: cm.uap,
    })
}

fn values(rows: &[Row], gold: bool) -> Vec<f64> {
    rows.iter()
        .filter_map(|r| if gold { r.gold.as_value() } else { r.pred.as_value() })
        .collect()
}

fn classes_of<'a>(rows: &'a [Row], gold: bool) -> Vec<&'a str> {
    rows.iter()
        .filter_map(|r| if gold { r.gold.as_class() } else { r.pred.as_class() })
        .collect()
}

fn correctness(
    spec: &TestSpec,
    ctx: &EvalContext,
    judge: &Judge,
    manifest: &DatasetManifest,
    source: &dyn PredictionSource,
) -> Vec<Instance> {
    let preds = match source.clean(judge.dataset, spec.task) {
        Ok(p) => p,
        Err(e) => return vec![judge.skip("*", e)],
    };
    let rows = aligned(manifest, spec.task, &preds, &ctx.classes);
    if spec.metric == MetricId::InRange {
        return consistency(spec, judge, manifest, &preds);
    }
    if rows.is_empty() {
        return vec![judge.skip("*", "no samples with both a gold label and a prediction")];
    }
    let per_class = |f: &dyn Fn(&str) -> Option<f64>, missing: &str| -> Vec<Instance> {
        ctx.classes
            .iter()
            .map(|c| match f(c) {
                Some(v) => judge.score(c.as_str(), v),
                None => judge.skip(c.as_str(), missing),
            })
            .collect()
    };
    let one = |key: &str, r: Result<f64, String>| match r {
        Ok(v) => vec![judge.score(key, v)],
        Err(e) => vec![judge.skip(key, e)],
    };
    match spec.metric {
        MetricId::Ppc | MetricId::Rpc | MetricId::Uap | MetricId::Uar => {
            let scores = match class_scores(&classes_of(&rows, true), &classes_of(&rows, false), &ctx.classes) {
                Ok(s) => s,
                Err(e) => return vec![judge.skip("*", e)],
            };
            match spec.metric {
                MetricId::Ppc => per_class(&|c| scores.precision.get(c).copied(), "class never predicted"),
                MetricId::Rpc => per_class(&|c| scores.recall.get(c).copied(), "class absent from gold labels"),
                MetricId::Uap => vec![judge.score("uap", scores.uap)],
                _ => vec![judge.score("uar", scores.uar)],
            }
        }
        MetricId::RelDiffPerClass => {
            let gold: Vec<Label> = rows.iter().map(|r| r.gold.clone()).collect();
            let pred: Vec<Label> = rows.iter().map(|r| r.pred.clone()).collect();
            match metrics::group_disparity(&pred, &gold, DisparityMode::RelDiffPerClass, None, None) {
                Ok(d) => ctx
                    .classes
                    .iter()
                    .map(|c| judge.score(c.as_str(), d.values.get(c).copied().unwrap_or(0.0)))
                    .collect(),
                Err(e) => vec![judge.skip("*", e.to_string())],
            }
        }
        MetricId::JsDistance => {
            let bins = BinSpec::new(spec.bins.unwrap_or(10)).expect("validated bin count");
            one(
                "js_distance",
                metrics::jensen_shannon_distance(&values(&rows, true), &values(&rows, false), bins).map_err(|e| e.to_string()),
            )
        }
        MetricId::Ccc => one(
            "ccc",
            metrics::concordance_corr(&values(&rows, true), &values(&rows, false)).map_err(|e| e.to_string()),
        ),
        MetricId::Pcc => one(
            "pcc",
            metrics::pearson_corr(&values(&rows, true), &values(&rows, false)).map_err(|e| e.to_string()),
        ),
        MetricId::Mae => one(
            "mae",
            metrics::mean_absolute_error(&values(&rows, true), &values(&rows, false)).map_err(|e| e.to_string()),
        ),
        MetricId::ClassProportionMae | MetricId::SpeakerMae | MetricId::SpearmanRho => {
            speaker_tests(spec, ctx, judge, manifest, &rows)
        }
        _ => vec![judge.skip("*", format!("metric {} is not a correctness metric", spec.metric))],
    }
}

fn consistency(spec: &TestSpec, judge: &Judge, manifest: &DatasetManifest, preds: &PredictionSet) -> Vec<Instance> {
    let mut by_class: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in &manifest.samples {
        let (Some(cat), Some(v)) = (s.category(), preds.get(&s.id).and_then(Label::as_value)) else { continue };
        by_class.entry(cat).or_default().push(v);
    }
    constrained_categories(spec.task)
        .into_iter()
        .filter_map(|c| {
            let vals = by_class.get(c)?;
            let (lo, hi) = expected_range(c, spec.task)?;
            metrics::in_range_fraction(vals, lo, hi).map(|f| judge.score(c, f))
        })
        .collect()
}

fn speaker_tests(spec: &TestSpec, ctx: &EvalContext, judge: &Judge, manifest: &DatasetManifest, rows: &[Row]) -> Vec<Instance> {
    let criteria = SpeakerCriteria {
        min_samples: spec.prerequisites.min_samples_per_speaker,
        min_per_class: spec.prerequisites.min_samples_per_class,
        classes: ctx.classes.clone(),
    };
    let gold: BTreeMap<String, Label> = rows.iter().map(|r| (r.sample.id.clone(), r.gold.clone())).collect();
    let pred: BTreeMap<String, Label> = rows.iter().map(|r| (r.sample.id.clone(), r.pred.clone())).collect();
    let truth = metrics::speaker_stats(manifest, &gold, spec.task, &criteria);
    let model = metrics::speaker_stats(manifest, &pred, spec.task, &criteria);
    let keys: Vec<String> = if spec.task.is_dimensional() {
        vec![spec.metric.as_str()]
    } else {
        ctx.classes.clone()
    };
    let speakers: Vec<&String> = truth.speakers.keys().filter(|s| model.speakers.contains_key(*s)).collect();
    if speakers.len() < spec.prerequisites.min_speakers {
        let reason = format!(
            "{} qualifying speakers, {} or more required",
            speakers.len(),
            spec.prerequisites.min_speakers
        );
        return keys.iter().map(|k| judge.skip(k.as_str(), reason.clone())).collect();
    }
    let mean_of = |stats: &metrics::SpeakerStats, s: &String| match &stats.speakers[s] {
        SpeakerSummary::Mean(m) => *m,
        SpeakerSummary::Proportions(_) => f64::NAN,
    };
    let prop_of = |stats: &metrics::SpeakerStats, s: &String, c: &str| match &stats.speakers[s] {
        SpeakerSummary::Proportions(p) => p.get(c).copied().unwrap_or(0.0),
        SpeakerSummary::Mean(_) => f64::NAN,
    };
    let result = |key: &str, r: Result<f64, metrics::MetricError>| match r {
        Ok(v) => judge.score(key, v),
        Err(e) => judge.skip(key, e.to_string()),
    };
    match (spec.metric, spec.task.is_dimensional()) {
        (MetricId::SpeakerMae, _) => {
            let t: Vec<f64> = speakers.iter().map(|s| mean_of(&truth, s)).collect();
            let p: Vec<f64> = speakers.iter().map(|s| mean_of(&model, s)).collect();
            vec![result(&keys[0], metrics::mean_absolute_error(&t, &p))]
        }
        (MetricId::SpearmanRho, true) => {
            let t: Vec<f64> = speakers.iter().map(|s| mean_of(&truth, s)).collect();
            let p: Vec<f64> = speakers.iter().map(|s| mean_of(&model, s)).collect();
            vec![result(&keys[0], metrics::spearman_rho(&t, &p))]
        }
        (MetricId::SpearmanRho, false) => keys
            .iter()
            .map(|c| {
                let t: Vec<f64> = speakers.iter().map(|s| prop_of(&truth, s, c)).collect();
                let p: Vec<f64> = speakers.iter().map(|s| prop_of(&model, s, c)).collect();
                result(c, metrics::spearman_rho(&t, &p))
            })
            .collect(),
        (MetricId::ClassProportionMae, _) => {
            let props = |stats: &metrics::SpeakerStats| -> BTreeMap<String, BTreeMap<String, f64>> {
                speakers
                    .iter()
                    .filter_map(|s| match &stats.speakers[*s] {
                        SpeakerSummary::Proportions(p) => Some(((*s).clone(), p.clone())),
                        SpeakerSummary::Mean(_) => None,
                    })
                    .collect()
            };
            let mae = metrics::class_proportion_mae(&props(&truth), &props(&model));
            keys.iter()
                .map(|c| match mae.get(c) {
                    Some(v) => judge.score(c.as_str(), *v),
                    None => judge.skip(c.as_str(), "class absent"),
                })
                .collect()
        }
        _ => vec![judge.skip("*", "not a speaker metric")],
    }
}

fn needs_truth(metric: MetricId) -> bool {
    matches!(
        metric,
        MetricId::DiffPpc
            | MetricId::DiffRpc
            | MetricId::DiffUar
            | MetricId::DiffCcc
            | MetricId::DiffPrecisionPerBin
            | MetricId::DiffRecallPerBin
    )
}

fn fairness(
    spec: &TestSpec,
    ctx: &EvalContext,
    mut judge: Judge,
    manifest: &DatasetManifest,
    source: &dyn PredictionSource,
) -> Vec<Instance> {
    let preds = match source.clean(judge.dataset, spec.task) {
        Ok(p) => p,
        Err(e) => return vec![judge.skip("*", e)],
    };
    let partition = match &spec.grouping {
        Some(Grouping::LanguageSentiment) => return sentiment(spec, &judge, manifest, &preds),
        Some(Grouping::Attribute { name }) => partition_by_attribute(manifest, name),
        Some(Grouping::Pitch { min_speaker_samples }) => partition_by_pitch(manifest, *min_speaker_samples),
        None => return vec![judge.skip("*", "no grouping")],
    };
    let partition = match partition {
        Ok(p) => p,
        Err(e) => return vec![judge.skip("*", e.to_string())],
    };
    let index = manifest.index();
    let truth_needed = needs_truth(spec.metric) || spec.balance;
    let usable = |id: &String| {
        preds.get(id).is_some_and(|p| p.matches(spec.task))
            && (!truth_needed
                || index
                    .get(id.as_str())
                    .and_then(|s| s.gold.get(&spec.task))
                    .is_some_and(|g| g.as_class().is_none_or(|c| ctx.classes.iter().any(|k| k == c))))
    };
    let mut filtered = GroupPartition {
        attribute: partition.attribute.clone(),
        groups: BTreeMap::new(),
        excluded: partition.excluded.clone(),
    };
    for (g, ids) in &partition.groups {
        let keep: Vec<String> = ids.iter().filter(|id| usable(id)).cloned().collect();
        if !keep.is_empty() {
            filtered.groups.insert(g.clone(), keep);
        }
    }
    let partition = if spec.balance {
        match balance_groups(manifest, &filtered, spec.task, ctx.balance_target, ctx.seed) {
            Ok(p) => p,
            Err(e) => return vec![judge.skip("*", e.to_string())],
        }
    } else {
        filtered
    };
    if partition.n_groups() < 2 {
        return vec![judge.skip("*", format!("{} group(s), at least 2 required", partition.n_groups()))];
    }

    let pooled_ids: Vec<&str> = partition.pooled();
    let pred_of = |ids: &[&str]| -> Vec<Label> { ids.iter().map(|id| preds.predictions[*id].clone()).collect() };
    let gold_of =
        |ids: &[&str]| -> Vec<Label> { ids.iter().filter_map(|id| index[*id].gold.get(&spec.task).cloned()).collect() };

    let mut n_min = spec.n_min.unwrap_or(0);
    if let (Some(sim), Some(table)) = (spec.metric.simulated(spec.category), ctx.thresholds.as_ref()) {
        let truth = needs_truth(spec.metric).then(|| truth_model_for(spec.task, &gold_of(&pooled_ids), &ctx.classes));
        match resolve_fairness_threshold(
            sim,
            &partition,
            truth.as_ref(),
            table,
            ctx.simulation_repeats,
            ctx.seed,
        ) {
            Ok(t) => judge.threshold = t,
            Err(e) => return vec![judge.skip("*", e.to_string())],
        }
        if spec.n_min.is_some() {
            n_min = n_min_bin(partition.min_group_size());
        }
    }

    let bins = BinSpec::new(spec.bins.unwrap_or(4)).expect("validated bin count");
    let pool_pred = pred_of(&pooled_ids);
    let pool_gold = gold_of(&pooled_ids);
    let mut out = Vec::new();
    for (group, ids) in &partition.groups {
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        let g_pred = pred_of(&ids);
        let g_gold = gold_of(&ids);
        match spec.metric {
            MetricId::DiffMean | MetricId::RelDiffPerClass | MetricId::RelDiffPerBin => {
                let mode = match spec.metric {
                    MetricId::DiffMean => DisparityMode::DiffMean,
                    MetricId::RelDiffPerClass => DisparityMode::RelDiffPerClass,
                    _ => DisparityMode::RelDiffPerBin,
                };
                match metrics::group_disparity(&g_pred, &pool_pred, mode, Some(bins), Some(n_min)) {
                    Ok(d) => {
                        if mode == DisparityMode::RelDiffPerClass {
                            for c in &ctx.classes {
                                out.push(judge.score(format!("{group}/{c}"), d.values.get(c).copied().unwrap_or(0.0)));
                            }
                        } else {
                            for (k, v) in &d.values {
                                let key = if k == "mean" { group.clone() } else { format!("{group}/{k}") };
                                out.push(judge.score(key, *v));
                            }
                            for k in &d.skipped {
                                out.push(judge.skip(format!("{group}/{k}"), format!("fewer than {n_min} reference samples")));
                            }
                        }
                    }
                    Err(e) => out.push(judge.skip(group.as_str(), e.to_string())),
                }
            }
            MetricId::DiffUar | MetricId::DiffPpc | MetricId::DiffRpc => {
                fn cls(v: &[Label]) -> Vec<&str> {
                    v.iter().filter_map(Label::as_class).collect()
                }
                let (g, p) = match (
                    class_scores(&cls(&g_gold), &cls(&g_pred), &ctx.classes),
                    class_scores(&cls(&pool_gold), &cls(&pool_pred), &ctx.classes),
                ) {
                    (Ok(g), Ok(p)) => (g, p),
                    (Err(e), _) | (_, Err(e)) => {
                        out.push(judge.skip(group.as_str(), e));
                        continue;
                    }
                };
                if spec.metric == MetricId::DiffUar {
                    out.push(judge.score(group.as_str(), g.uar - p.uar));
                    continue;
                }
                let (gm, pm, missing) = if spec.metric == MetricId::DiffPpc {
                    (&g.precision, &p.precision, "class never predicted in the group or pool")
                } else {
                    (&g.recall, &p.recall, "class absent from gold labels of the group")
                };
                for c in &ctx.classes {
                    let key = format!("{group}/{c}");
                    match (gm.get(c), pm.get(c)) {
                        (Some(a), Some(b)) => out.push(judge.score(key, a - b)),
                        _ => out.push(judge.skip(key, missing)),
                    }
                }
            }
            MetricId::DiffCcc => {
                let v = |l: &[Label]| -> Vec<f64> { l.iter().filter_map(Label::as_value).collect() };
                match (
                    metrics::concordance_corr(&v(&g_gold), &v(&g_pred)),
                    metrics::concordance_corr(&v(&pool_gold), &v(&pool_pred)),
                ) {
                    (Ok(a), Ok(b)) => out.push(judge.score(group.as_str(), a - b)),
                    (Err(e), _) | (_, Err(e)) => out.push(judge.skip(group.as_str(), e.to_string())),
                }
            }
            MetricId::DiffPrecisionPerBin | MetricId::DiffRecallPerBin => {
                let v = |l: &[Label]| -> Vec<f64> { l.iter().filter_map(Label::as_value).collect() };
                let (g, p) = match (
                    metrics::binned_class_metrics(&v(&g_gold), &v(&g_pred), bins, 0),
                    metrics::binned_class_metrics(&v(&pool_gold), &v(&pool_pred), bins, n_min),
                ) {
                    (Ok(g), Ok(p)) => (g, p),
                    (Err(e), _) | (_, Err(e)) => {
                        out.push(judge.skip(group.as_str(), e.to_string()));
                        continue;
                    }
                };
                let (gm, pm) = if spec.metric == MetricId::DiffPrecisionPerBin {
                    (&g.precision_per_bin, &p.precision_per_bin)
                } else {
                    (&g.recall_per_bin, &p.recall_per_bin)
                };
                for b in 0..bins.n_bins() {
                    let key = format!("{group}/{}", BinSpec::key(b));
                    if p.skipped_bins.contains(&b) {
                        out.push(judge.skip(key, format!("fewer than {n_min} reference samples")));
                        continue;
                    }
                    match (gm.get(&b).copied().flatten(), pm.get(&b).copied().flatten()) {
                        (Some(a), Some(c)) => out.push(judge.score(key, a - c)),
                        _ => out.push(judge.skip(key, "undefined for the group or the pool")),
                    }
                }
            }
            _ => out.push(judge.skip("*", format!("metric {} is not a group metric", spec.metric))),
        }
    }
    out
}

fn sentiment(spec: &TestSpec, judge: &Judge, manifest: &DatasetManifest, preds: &PredictionSet) -> Vec<Instance> {
    let mut by_cell: BTreeMap<(String, String), Vec<Label>> = BTreeMap::new();
    let mut by_language: BTreeMap<String, Vec<Label>> = BTreeMap::new();
    for s in &manifest.samples {
        let (Some(lang), Some(p)) = (s.attr(attr::LANGUAGE), preds.get(&s.id)) else { continue };
        let lang = lang.group_key();
        by_language.entry(lang.clone()).or_default().push(p.clone());
        if let Some(sent) = s.attr(attr::SENTIMENT) {
            by_cell.entry((lang, sent.group_key())).or_default().push(p.clone());
        }
    }
    if by_cell.is_empty() {
        return vec![judge.skip("*", "no samples with language and sentiment attributes")];
    }
    let bins = BinSpec::new(spec.bins.unwrap_or(4)).expect("validated bin count");
    let n_min = spec.n_min.unwrap_or(0);
    let scores = match metrics::sentiment_shift_scores(&by_cell, &by_language, spec.task, bins, n_min) {
        Ok(s) => s,
        Err(e) => return vec![judge.skip("*", e.to_string())],
    };
    let wanted = |key: &str| match spec.metric {
        MetricId::DiffMeanShift => key == "mean",
        MetricId::DiffBinProportionShift => key.starts_with("bin-"),
        _ => true,
    };
    let mut out: Vec<Instance> = scores
        .scores
        .iter()
        .filter(|((_, _, k), _)| wanted(k))
        .map(|((l, s, k), v)| {
            let key = if spec.metric == MetricId::DiffMeanShift {
                format!("{l}/{s}")
            } else {
                format!("{l}/{s}/{k}")
            };
            judge.score(key, *v)
        })
        .collect();
    if spec.metric == MetricId::DiffBinProportionShift {
        for (l, s) in by_cell.keys() {
            for k in &scores.skipped {
                out.push(judge.skip(format!("{l}/{s}/{k}"), format!("fewer than {n_min} pooled samples")));
            }
        }
    }
    out
}

/// Shift a perturbation's seed by the run seed.
fn seeded(spec: &PerturbationSpec, run_seed: u64) -> PerturbationSpec {
    let mut s = spec.clone();
    s.seed = s.seed.wrapping_add(run_seed);
    s
}

fn robustness(
    spec: &TestSpec,
    ctx: &EvalContext,
    judge: &Judge,
    manifest: &DatasetManifest,
    source: &dyn PredictionSource,
) -> Vec<Instance> {
    let clean = match source.clean(judge.dataset, spec.task) {
        Ok(p) => p,
        Err(e) => return vec![judge.skip("*", e)],
    };
    let mut out = Vec::new();
    for cond in &spec.conditions {
        let name = cond.name();
        match cond {
            Condition::Perturb { spec: p, .. } => {
                let perturbed = source.perturbed(judge.dataset, spec.task, &seeded(p, ctx.seed));
                out.push(compare(spec, ctx, judge, manifest, name, &clean, perturbed));
            }
            Condition::Paired { dataset, .. } => {
                if !ctx.manifests.contains_key(dataset) {
                    out.push(judge.skip(name, format!("paired dataset `{dataset}` is not bound")));
                    continue;
                }
                let other = source.clean(dataset, spec.task);
                out.push(compare(spec, ctx, judge, manifest, name, &clean, other));
            }
            Condition::ImpulseResponses { set, .. } => {
                let Some(entries) = ctx.ir_sets.get(set) else {
                    out.push(judge.skip(name, format!("impulse-response set `{set}` is not bound")));
                    continue;
                };
                let Some(reference) = entries.iter().find(|e| e.reference) else {
                    out.push(judge.skip(name, format!("impulse-response set `{set}` has no reference entry")));
                    continue;
                };
                let ir_spec = |e: &IrEntry| {
                    PerturbationSpec::new(
                        Operation::ImpulseResponse {
                            ir: e.path.display().to_string(),
                        },
                        0,
                    )
                };
                let baseline = match source.perturbed(judge.dataset, spec.task, &ir_spec(reference)) {
                    Ok(b) => b,
                    Err(e) => {
                        out.push(judge.skip(name, e));
                        continue;
                    }
                };
                for e in entries.iter().filter(|e| !e.reference) {
                    let key = format!("{name}/{}", e.id);
                    let other = source.perturbed(judge.dataset, spec.task, &ir_spec(e));
                    out.push(compare(spec, ctx, judge, manifest, &key, &baseline, other));
                }
            }
        }
    }
    out
}

fn compare(
    spec: &TestSpec,
    ctx: &EvalContext,
    judge: &Judge,
    manifest: &DatasetManifest,
    key: &str,
    baseline: &PredictionSet,
    other: Result<PredictionSet, String>,
) -> Instance {
    let other = match other {
        Ok(o) => o,
        Err(e) => return judge.skip(key, e),
    };
    match spec.metric {
        MetricId::Unchanged => match metrics::unchanged_fraction(baseline, &other) {
            Ok(u) if u.compared > 0 => judge.score(key, u.fraction),
            Ok(_) => judge.skip(key, "no common sample ids"),
            Err(e) => judge.skip(key, e.to_string()),
        },
        MetricId::ChangeUar | MetricId::ChangeCcc => {
            let common: PredictionSet = {
                let mut s = PredictionSet::new(baseline.model_id.clone(), baseline.task);
                for (id, l) in &baseline.predictions {
                    if other.predictions.contains_key(id) {
                        s.insert(id.clone(), l.clone());
                    }
                }
                s
            };
            let a = aligned(manifest, spec.task, &common, &ctx.classes);
            let b = aligned(manifest, spec.task, &other, &ctx.classes);
            let b: Vec<Row> = b.into_iter().filter(|r| common.predictions.contains_key(&r.sample.id)).collect();
            if a.is_empty() {
                return judge.skip(key, "no samples with gold labels in both prediction sets");
            }
            let metric = |rows: &[Row]| -> Result<f64, String> {
                if spec.metric == MetricId::ChangeCcc {
                    metrics::concordance_corr(&values(rows, true), &values(rows, false)).map_err(|e| e.to_string())
                } else {
                    class_scores(&classes_of(rows, true), &classes_of(rows, false), &ctx.classes).map(|s| s.uar)
                }
            };
            match (metric(&a), metric(&b)) {
                (Ok(x), Ok(y)) => judge.score(key, y - x),
                (Err(e), _) | (_, Err(e)) => judge.skip(key, e),
            }
        }
        _ => judge.skip(key, format!("metric {} is not a robustness metric", spec.metric)),
    }
}
