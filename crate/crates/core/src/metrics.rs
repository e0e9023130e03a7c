//! Metric kernels for correctness, fairness and robustness tests.
//!
//! All moments are population (biased) moments.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{BinSpec, DatasetManifest, Label, PredictionSet, Task};

/// Two dimensional predictions closer than this count as unchanged.
pub const UNCHANGED_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("undefined: zero variance")]
    ZeroVariance,
    #[error("empty input")]
    Empty,
    #[error("label `{0}` is not in the class set")]
    UnknownLabel(String),
    #[error("labels do not match the task")]
    LabelKind,
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, MetricError>;

fn check_pair(a: &[f64], b: &[f64], min_len: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < min_len {
        return Err(MetricError::TooShort {
            needed: min_len,
            got: a.len(),
        });
    }
    Ok(())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance and covariance terms: (var_a, var_b, cov).
fn moments(a: &[f64], b: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = a.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let mut va = 0.0;
    let mut vb = 0.0;
    let mut cov = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        va += dx * dx;
        vb += dy * dy;
        cov += dx * dy;
    }
    (ma, mb, va / n, vb / n, cov / n)
}

/// Concordance correlation coefficient.
///
/// Two equal constant sequences give 1; two unequal constants give 0.
pub fn concordance_corr(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(truth, pred, 2)?;
    let (mt, mp, vt, vp, cov) = moments(truth, pred);
    let denom = vt + vp + (mt - mp).powi(2);
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok(2.0 * cov / denom)
}

pub fn pearson_corr(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(truth, pred, 2)?;
    let constant = |xs: &[f64]| xs.iter().all(|x| *x == xs[0]);
    if constant(truth) || constant(pred) {
        return Err(MetricError::ZeroVariance);
    }
    let (_, _, vt, vp, cov) = moments(truth, pred);
    if vt == 0.0 || vp == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok((cov / (vt.sqrt() * vp.sqrt())).clamp(-1.0, 1.0))
}

pub fn mean_absolute_error(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(truth, pred, 1)?;
    Ok(truth.iter().zip(pred).map(|(t, p)| (t - p).abs()).sum::<f64>() / truth.len() as f64)
}

/// Per-class recall/precision with unweighted averages.
///
/// Recall is only defined for classes present in the truth, precision only for
/// classes that were predicted; undefined entries are absent from the maps and
/// from the averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub recall_per_class: BTreeMap<String, f64>,
    pub precision_per_class: BTreeMap<String, f64>,
    pub uar: f64,
    pub uap: f64,
}

pub fn class_metrics<S: AsRef<str>>(truth: &[S], pred: &[S], classes: &[S]) -> Result<ClassMetrics> {
    if truth.len() != pred.len() {
        return Err(MetricError::LengthMismatch(truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(MetricError::Empty);
    }
    let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_ref(), i)).collect();
    let k = classes.len();
    let lookup = |s: &S| {
        index
            .get(s.as_ref())
            .copied()
            .ok_or_else(|| MetricError::UnknownLabel(s.as_ref().to_string()))
    };
    let mut confusion = vec![vec![0usize; k]; k];
    for (t, p) in truth.iter().zip(pred) {
        confusion[lookup(t)?][lookup(p)?] += 1;
    }
    Ok(metrics_from_confusion(&confusion, |i| classes[i].as_ref().to_string()))
}

fn metrics_from_confusion(confusion: &[Vec<usize>], name: impl Fn(usize) -> String) -> ClassMetrics {
    let k = confusion.len();
    let mut recall = BTreeMap::new();
    let mut precision = BTreeMap::new();
    for c in 0..k {
        let tp = confusion[c][c] as f64;
        let truth_count: usize = confusion[c].iter().sum();
        let pred_count: usize = (0..k).map(|r| confusion[r][c]).sum();
        if truth_count > 0 {
            recall.insert(name(c), tp / truth_count as f64);
        }
        if pred_count > 0 {
            precision.insert(name(c), tp / pred_count as f64);
        }
    }
    let avg = |m: &BTreeMap<String, f64>| {
        if m.is_empty() {
            0.0
        } else {
            m.values().sum::<f64>() / m.len() as f64
        }
    };
    ClassMetrics {
        uar: avg(&recall),
        uap: avg(&precision),
        recall_per_class: recall,
        precision_per_class: precision,
    }
}

/// Fractional ranks (1-based); ties share their average rank.
pub fn fractional_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, 2)?;
    pearson_corr(&fractional_ranks(a), &fractional_ranks(b))
}

pub fn bin_values(values: &[f64], spec: BinSpec) -> Vec<usize> {
    let mut counts = vec![0; spec.n_bins()];
    for &v in values {
        counts[spec.index(v)] += 1;
    }
    counts
}

fn kl_base2(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, mi)| pi * (pi / mi).log2())
        .sum()
}

/// Jensen-Shannon distance between two probability vectors, base 2.
pub fn js_distance_probs(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let div = 0.5 * kl_base2(p, &m) + 0.5 * kl_base2(q, &m);
    div.max(0.0).sqrt().min(1.0)
}

/// Jensen-Shannon distance of the binned distributions of two value sequences.
pub fn jensen_shannon_distance(truth: &[f64], pred: &[f64], spec: BinSpec) -> Result<f64> {
    if truth.is_empty() || pred.is_empty() {
        return Err(MetricError::Empty);
    }
    let norm = |xs: &[f64]| {
        let counts = bin_values(xs, spec);
        counts.iter().map(|&c| c as f64 / xs.len() as f64).collect::<Vec<_>>()
    };
    Ok(js_distance_probs(&norm(truth), &norm(pred)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisparityMode {
    DiffMean,
    RelDiffPerClass,
    RelDiffPerBin,
}

/// Signed group-minus-reference differences, keyed by `mean`, class or bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisparityReport {
    pub mode: DisparityMode,
    pub values: BTreeMap<String, f64>,
    pub skipped: BTreeSet<String>,
}

fn values_of(labels: &[Label]) -> Result<Vec<f64>> {
    labels.iter().map(|l| l.as_value().ok_or(MetricError::LabelKind)).collect()
}

fn classes_of(labels: &[Label]) -> Result<Vec<&str>> {
    labels.iter().map(|l| l.as_class().ok_or(MetricError::LabelKind)).collect()
}

fn proportions<'a>(items: impl Iterator<Item = &'a str>, n: usize) -> BTreeMap<&'a str, f64> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in items {
        *counts.entry(c).or_default() += 1;
    }
    counts.into_iter().map(|(c, k)| (c, k as f64 / n as f64)).collect()
}

/// Statistical-parity disparity of a group against a reference pool.
///
/// Bins whose reference count is below `n_min` are reported as skipped.
pub fn group_disparity(
    group: &[Label],
    reference: &[Label],
    mode: DisparityMode,
    bins: Option<BinSpec>,
    n_min: Option<usize>,
) -> Result<DisparityReport> {
    if group.is_empty() || reference.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut values = BTreeMap::new();
    let mut skipped = BTreeSet::new();
    match mode {
        DisparityMode::DiffMean => {
            values.insert("mean".to_string(), mean(&values_of(group)?) - mean(&values_of(reference)?));
        }
        DisparityMode::RelDiffPerClass => {
            let g = classes_of(group)?;
            let r = classes_of(reference)?;
            let pg = proportions(g.iter().copied(), g.len());
            let pr = proportions(r.iter().copied(), r.len());
            let keys: BTreeSet<&str> = pg.keys().chain(pr.keys()).copied().collect();
            for c in keys {
                values.insert(
                    c.to_string(),
                    pg.get(c).copied().unwrap_or(0.0) - pr.get(c).copied().unwrap_or(0.0),
                );
            }
        }
        DisparityMode::RelDiffPerBin => {
            let spec = bins.ok_or_else(|| MetricError::Invalid("per-bin disparity needs a bin spec".into()))?;
            let g = values_of(group)?;
            let r = values_of(reference)?;
            let cg = bin_values(&g, spec);
            let cr = bin_values(&r, spec);
            let n_min = n_min.unwrap_or(0);
            for b in 0..spec.n_bins() {
                let key = BinSpec::key(b);
                if cr[b] < n_min {
                    skipped.insert(key);
                    continue;
                }
                values.insert(key, cg[b] as f64 / g.len() as f64 - cr[b] as f64 / r.len() as f64);
            }
        }
    }
    Ok(DisparityReport { mode, values, skipped })
}

/// Recall and precision per output bin, treating bins as classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedClassMetrics {
    pub recall_per_bin: BTreeMap<usize, Option<f64>>,
    pub precision_per_bin: BTreeMap<usize, Option<f64>>,
    pub skipped_bins: BTreeSet<usize>,
}

/// Bins with a truth count below `n_min` are skipped (their entries are `None`).
pub fn binned_class_metrics(truth: &[f64], pred: &[f64], spec: BinSpec, n_min: usize) -> Result<BinnedClassMetrics> {
    check_pair(truth, pred, 1)?;
    if truth.iter().chain(pred).any(|v| !(0.0..=1.0).contains(v)) {
        return Err(MetricError::Invalid("values must lie in [0, 1]".into()));
    }
    let k = spec.n_bins();
    let mut confusion = vec![vec![0usize; k]; k];
    for (t, p) in truth.iter().zip(pred) {
        confusion[spec.index(*t)][spec.index(*p)] += 1;
    }
    let cm = metrics_from_confusion(&confusion, |i| i.to_string());
    let mut recall_per_bin = BTreeMap::new();
    let mut precision_per_bin = BTreeMap::new();
    let mut skipped_bins = BTreeSet::new();
    for b in 0..k {
        let truth_count: usize = confusion[b].iter().sum();
        if truth_count < n_min {
            skipped_bins.insert(b);
            recall_per_bin.insert(b, None);
            precision_per_bin.insert(b, None);
        } else {
            recall_per_bin.insert(b, cm.recall_per_class.get(&b.to_string()).copied());
            precision_per_bin.insert(b, cm.precision_per_class.get(&b.to_string()).copied());
        }
    }
    Ok(BinnedClassMetrics {
        recall_per_bin,
        precision_per_bin,
        skipped_bins,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Unchanged {
    pub fraction: f64,
    /// Ids present in both sets.
    pub compared: usize,
    /// Ids present in only one of the sets.
    pub unmatched: usize,
}

/// Slack absorbing decimal round-off, so that e.g. 0.30 vs 0.25 counts as changed.
const UNCHANGED_EPS: f64 = 1e-9;

fn is_unchanged_value(a: f64, b: f64) -> bool {
    (a - b).abs() < UNCHANGED_TOLERANCE - UNCHANGED_EPS
}

/// Share of predictions that survive a perturbation.
///
/// Classes must be identical; dimensional values must differ by strictly less
/// than [`UNCHANGED_TOLERANCE`].
pub fn unchanged_fraction(clean: &PredictionSet, perturbed: &PredictionSet) -> Result<Unchanged> {
    if clean.task != perturbed.task {
        return Err(MetricError::LabelKind);
    }
    let mut compared = 0;
    let mut same = 0;
    for (id, a) in &clean.predictions {
        let Some(b) = perturbed.predictions.get(id) else { continue };
        compared += 1;
        let unchanged = match (a, b) {
            (Label::Class(x), Label::Class(y)) => x == y,
            (Label::Value(x), Label::Value(y)) => is_unchanged_value(x.get(), y.get()),
            _ => return Err(MetricError::LabelKind),
        };
        if unchanged {
            same += 1;
        }
    }
    if compared == 0 {
        return Err(MetricError::Empty);
    }
    let unmatched = clean.len() + perturbed.len() - 2 * compared;
    Ok(Unchanged {
        fraction: same as f64 / compared as f64,
        compared,
        unmatched,
    })
}

/// Share of values inside `[lo, hi]`; `None` for empty input.
pub fn in_range_fraction(preds: &[f64], lo: f64, hi: f64) -> Option<f64> {
    if preds.is_empty() {
        return None;
    }
    Some(preds.iter().filter(|v| (lo..=hi).contains(*v)).count() as f64 / preds.len() as f64)
}

#[derive(Debug, Clone)]
pub struct SpeakerCriteria {
    /// Minimum samples per speaker for dimensional tasks.
    pub min_samples: usize,
    /// Minimum samples per class for categorical tasks; a speaker needs
    /// `min_per_class * classes.len()` samples.
    pub min_per_class: usize,
    pub classes: Vec<String>,
}

impl Default for SpeakerCriteria {
    fn default() -> Self {
        Self {
            min_samples: 10,
            min_per_class: 8,
            classes: crate::manifest::CANONICAL_CLASSES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeakerSummary {
    Mean(f64),
    Proportions(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpeakerStats {
    pub speakers: BTreeMap<String, SpeakerSummary>,
    /// Speakers that did not meet the sample-count criteria.
    pub excluded: usize,
}

/// Per-speaker mean value or class proportions over `labels`.
///
/// Only samples with a speaker and an entry in `labels` take part.
pub fn speaker_stats(
    manifest: &DatasetManifest,
    labels: &BTreeMap<String, Label>,
    task: Task,
    criteria: &SpeakerCriteria,
) -> SpeakerStats {
    let mut by_speaker: BTreeMap<&str, Vec<&Label>> = BTreeMap::new();
    for s in &manifest.samples {
        if let (Some(spk), Some(l)) = (&s.speaker, labels.get(&s.id)) {
            by_speaker.entry(spk).or_default().push(l);
        }
    }
    let mut stats = SpeakerStats::default();
    for (spk, ls) in by_speaker {
        if task.is_dimensional() {
            let vals: Vec<f64> = ls.iter().filter_map(|l| l.as_value()).collect();
            if vals.len() < criteria.min_samples {
                stats.excluded += 1;
                continue;
            }
            stats.speakers.insert(spk.to_string(), SpeakerSummary::Mean(mean(&vals)));
        } else {
            let cls: Vec<&str> = ls.iter().filter_map(|l| l.as_class()).collect();
            if cls.is_empty() || cls.len() < criteria.min_per_class * criteria.classes.len() {
                stats.excluded += 1;
                continue;
            }
            let props = criteria
                .classes
                .iter()
                .map(|c| (c.clone(), cls.iter().filter(|x| **x == c).count() as f64 / cls.len() as f64))
                .collect();
            stats.speakers.insert(spk.to_string(), SpeakerSummary::Proportions(props));
        }
    }
    stats
}

/// Per class, mean absolute error of the speaker proportions over speakers present in both maps.
pub fn class_proportion_mae(
    truth: &BTreeMap<String, BTreeMap<String, f64>>,
    pred: &BTreeMap<String, BTreeMap<String, f64>>,
) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (spk, tp) in truth {
        let Some(pp) = pred.get(spk) else { continue };
        let classes: BTreeSet<&String> = tp.keys().chain(pp.keys()).collect();
        for c in classes {
            let d = (tp.get(c).copied().unwrap_or(0.0) - pp.get(c).copied().unwrap_or(0.0)).abs();
            let e = sums.entry(c.clone()).or_default();
            e.0 += d;
            e.1 += 1;
        }
    }
    sums.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect()
}

/// Sentiment shift scores keyed by (language, sentiment, key).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ShiftScores {
    pub scores: BTreeMap<(String, String, String), f64>,
    /// Bin keys whose pooled count is below the minimum.
    pub skipped: BTreeSet<String>,
}

/// Difference between each language's prediction shift for a sentiment and the
/// average shift for that sentiment over all languages.
///
/// Categories produce one key per class; dimensions one key per bin plus `mean`.
pub fn sentiment_shift_scores(
    by_cell: &BTreeMap<(String, String), Vec<Label>>,
    by_language: &BTreeMap<String, Vec<Label>>,
    task: Task,
    bins: BinSpec,
    n_min: usize,
) -> Result<ShiftScores> {
    let languages: BTreeSet<&str> = by_cell.keys().map(|(l, _)| l.as_str()).collect();
    if languages.len() < 2 {
        return Err(MetricError::Invalid(format!(
            "need at least 2 languages, got {}",
            languages.len()
        )));
    }
    if by_cell.values().any(Vec::is_empty) {
        return Err(MetricError::Empty);
    }

    // per-language distributions: key -> proportion (or mean)
    let describe = |labels: &[Label]| -> Result<BTreeMap<String, f64>> {
        let mut out = BTreeMap::new();
        if task.is_dimensional() {
            let vals = values_of(labels)?;
            let counts = bin_values(&vals, bins);
            for (b, c) in counts.iter().enumerate() {
                out.insert(BinSpec::key(b), *c as f64 / vals.len() as f64);
            }
            out.insert("mean".to_string(), mean(&vals));
        } else {
            let cls = classes_of(labels)?;
            for (c, p) in proportions(cls.iter().copied(), cls.len()) {
                out.insert(c.to_string(), p);
            }
        }
        Ok(out)
    };

    let mut keys: BTreeSet<String> = BTreeSet::new();
    let mut skipped = BTreeSet::new();
    if task.is_dimensional() {
        let pooled: Vec<f64> = by_language
            .values()
            .flat_map(|ls| ls.iter().filter_map(Label::as_value))
            .collect();
        let counts = bin_values(&pooled, bins);
        for (b, c) in counts.iter().enumerate() {
            if *c < n_min {
                skipped.insert(BinSpec::key(b));
            } else {
                keys.insert(BinSpec::key(b));
            }
        }
        keys.insert("mean".to_string());
    } else {
        for ls in by_language.values() {
            keys.extend(classes_of(ls)?.into_iter().map(str::to_string));
        }
    }

    let mut lang_desc = BTreeMap::new();
    for lang in &languages {
        let ls = by_language
            .get(*lang)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| MetricError::Invalid(format!("no pooled predictions for language {lang}")))?;
        lang_desc.insert(*lang, describe(ls)?);
    }

    // shift per cell
    let mut shifts: BTreeMap<(&str, &str), BTreeMap<&str, f64>> = BTreeMap::new();
    for ((lang, sent), ls) in by_cell {
        let cell = describe(ls)?;
        let base = &lang_desc[lang.as_str()];
        let shift = keys
            .iter()
            .map(|k| {
                let v = cell.get(k).copied().unwrap_or(0.0) - base.get(k).copied().unwrap_or(0.0);
                (k.as_str(), v)
            })
            .collect();
        shifts.insert((lang.as_str(), sent.as_str()), shift);
    }

    let sentiments: BTreeSet<&str> = by_cell.keys().map(|(_, s)| s.as_str()).collect();
    let mut scores = BTreeMap::new();
    for sent in sentiments {
        let cells: Vec<(&str, &BTreeMap<&str, f64>)> = shifts
            .iter()
            .filter(|((_, s), _)| *s == sent)
            .map(|((l, _), v)| (*l, v))
            .collect();
        for key in &keys {
            let avg = cells.iter().map(|(_, v)| v[key.as_str()]).sum::<f64>() / cells.len() as f64;
            for (lang, v) in &cells {
                scores.insert(
                    (lang.to_string(), sent.to_string(), key.clone()),
                    v[key.as_str()] - avg,
                );
            }
        }
    }
    Ok(ShiftScores { scores, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const T: [f64; 3] = [0.1, 0.5, 0.9];
    const P: [f64; 3] = [0.2, 0.5, 0.8];

    #[test]
    fn ccc_examples() {
        assert_abs_diff_eq!(concordance_corr(&T, &P).unwrap(), 0.96, epsilon = 1e-12);
        assert_abs_diff_eq!(concordance_corr(&T, &T).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(concordance_corr(&[0.1, 0.9], &[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(concordance_corr(&[0.3, 0.3], &[0.3, 0.3]).unwrap(), 1.0);
        assert_eq!(concordance_corr(&[0.3, 0.3], &[0.4, 0.4]).unwrap(), 0.0);
        assert!(concordance_corr(&[0.3], &[0.3]).is_err());
        assert!(concordance_corr(&[0.3, 0.1], &[0.3]).is_err());
    }

    #[test]
    fn pcc_examples() {
        assert_abs_diff_eq!(pearson_corr(&T, &P).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pearson_corr(&T, &[0.9, 0.5, 0.1]).unwrap(), -1.0, epsilon = 1e-12);
        assert_eq!(pearson_corr(&T, &[0.5; 3]), Err(MetricError::ZeroVariance));
    }

    #[test]
    fn mae_examples() {
        assert_abs_diff_eq!(mean_absolute_error(&T, &P).unwrap(), 0.2 / 3.0, epsilon = 1e-12);
        assert_eq!(mean_absolute_error(&T, &T).unwrap(), 0.0);
        assert_eq!(mean_absolute_error(&[0.0], &[1.0]).unwrap(), 1.0);
    }

    #[test]
    fn class_metrics_examples() {
        let m = class_metrics(&["A", "A", "B", "B"], &["A", "B", "B", "B"], &["A", "B"]).unwrap();
        assert_eq!(m.recall_per_class["A"], 0.5);
        assert_eq!(m.recall_per_class["B"], 1.0);
        assert_abs_diff_eq!(m.uar, 0.75);
        assert_eq!(m.precision_per_class["A"], 1.0);
        assert_abs_diff_eq!(m.precision_per_class["B"], 2.0 / 3.0);
        assert_abs_diff_eq!(m.uap, 5.0 / 6.0, epsilon = 1e-12);

        let same = class_metrics(&["A", "B", "C"], &["A", "B", "C"], &["A", "B", "C"]).unwrap();
        assert_eq!((same.uar, same.uap), (1.0, 1.0));

        let single = class_metrics(&["A", "A"], &["A", "A"], &["A", "B", "C"]).unwrap();
        assert_eq!(single.uar, 1.0);
        assert_eq!(single.recall_per_class.len(), 1);

        assert_eq!(
            class_metrics(&["A"], &["Z"], &["A"]),
            Err(MetricError::UnknownLabel("Z".into()))
        );
    }

    #[test]
    fn spearman_examples() {
        assert_abs_diff_eq!(spearman_rho(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(spearman_rho(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            spearman_rho(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap(),
            0.8,
            epsilon = 1e-12
        );
        assert_eq!(fractional_ranks(&[5.0, 1.0, 5.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn binning_examples() {
        let spec = BinSpec::new(4).unwrap();
        assert_eq!(bin_values(&[0.1, 0.3, 0.9], spec), vec![1, 1, 0, 1]);
        assert_eq!(bin_values(&[1.0], spec), vec![0, 0, 0, 1]);
        assert_eq!(bin_values(&[], spec), vec![0, 0, 0, 0]);
    }

    #[test]
    fn js_distance_examples() {
        let spec = BinSpec::new(10).unwrap();
        assert_eq!(jensen_shannon_distance(&[0.05, 0.55], &[0.55, 0.05], spec).unwrap(), 0.0);
        assert_abs_diff_eq!(
            jensen_shannon_distance(&[0.05, 0.05], &[0.95, 0.99], spec).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        // direct evaluation: p=(.5,.5), q=(1,0), m=(.75,.25)
        let kl_p = 0.5 * (0.5f64 / 0.75).log2() + 0.5 * (0.5f64 / 0.25).log2();
        let kl_q = (1.0f64 / 0.75).log2();
        let expected = (0.5 * kl_p + 0.5 * kl_q).sqrt();
        let got = jensen_shannon_distance(&[0.05, 0.15], &[0.05, 0.05], spec).unwrap();
        assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(got, 0.5579, epsilon = 1e-4);
        assert!(jensen_shannon_distance(&[], &[0.1], spec).is_err());
    }

    fn vals(xs: &[f64]) -> Vec<Label> {
        xs.iter().map(|&x| Label::value(x).unwrap()).collect()
    }

    fn cls(xs: &[&str]) -> Vec<Label> {
        xs.iter().map(|&x| Label::class(x)).collect()
    }

    #[test]
    fn disparity_examples() {
        let g = vals(&[0.5, 0.7]);
        let r = vals(&[0.5, 0.6]);
        let rep = group_disparity(&g, &r, DisparityMode::DiffMean, None, None).unwrap();
        assert_abs_diff_eq!(rep.values["mean"], 0.05, epsilon = 1e-12);

        let mut group = vec!["anger"; 3];
        group.extend(vec!["neutral"; 7]);
        let mut reference = vec!["anger"; 5];
        reference.extend(vec!["neutral"; 15]);
        let rep = group_disparity(&cls(&group), &cls(&reference), DisparityMode::RelDiffPerClass, None, None).unwrap();
        assert_abs_diff_eq!(rep.values["anger"], 0.05, epsilon = 1e-12);

        // reference bin 3 holds two samples
        let reference = vals(&[0.1, 0.1, 0.1, 0.1, 0.3, 0.3, 0.3, 0.3, 0.6, 0.6, 0.6, 0.6, 0.8, 0.9]);
        let spec = BinSpec::new(4).unwrap();
        let rep = group_disparity(&reference, &reference, DisparityMode::RelDiffPerBin, Some(spec), Some(4)).unwrap();
        assert!(rep.skipped.contains("bin-3"));
        assert!(rep.values.values().all(|v| *v == 0.0));
        assert!(group_disparity(&[], &reference, DisparityMode::DiffMean, None, None).is_err());
    }

    #[test]
    fn binned_metrics_examples() {
        let spec = BinSpec::new(4).unwrap();
        let t = [0.1, 0.3, 0.6, 0.9];
        let m = binned_class_metrics(&t, &t, spec, 1).unwrap();
        assert!(m.recall_per_bin.values().all(|r| *r == Some(1.0)));

        let m = binned_class_metrics(&[0.6, 0.6], &[0.8, 0.8], spec, 1).unwrap();
        assert_eq!(m.recall_per_bin[&2], Some(0.0));
        assert_eq!(m.skipped_bins, BTreeSet::from([0, 1, 3]));
    }

    fn set(task: Task, labels: Vec<(&str, Label)>) -> PredictionSet {
        let mut s = PredictionSet::new("m", task);
        for (id, l) in labels {
            s.insert(id, l);
        }
        s
    }

    #[test]
    fn unchanged_examples() {
        let v = |x| Label::value(x).unwrap();
        let clean = set(Task::Arousal, vec![("a", v(0.5)), ("b", v(0.5))]);
        let pert = set(Task::Arousal, vec![("a", v(0.54)), ("b", v(0.56))]);
        assert_eq!(unchanged_fraction(&clean, &clean).unwrap().fraction, 1.0);
        assert_eq!(unchanged_fraction(&clean, &pert).unwrap().fraction, 0.5);

        let c1 = set(Task::Categories, vec![("a", Label::class("A")), ("b", Label::class("B"))]);
        let c2 = set(Task::Categories, vec![("a", Label::class("A")), ("b", Label::class("A"))]);
        assert_eq!(unchanged_fraction(&c1, &c2).unwrap().fraction, 0.5);
    }

    #[test]
    fn unchanged_boundary_counts_as_changed() {
        let v = |x| Label::value(x).unwrap();
        let clean = set(Task::Arousal, vec![("a", v(0.25))]);
        let pert = set(Task::Arousal, vec![("a", v(0.30))]);
        assert_eq!(unchanged_fraction(&clean, &pert).unwrap().fraction, 0.0);
    }

    #[test]
    fn in_range_examples() {
        assert_eq!(in_range_fraction(&[0.8, 0.4], 0.55, 1.0), Some(0.5));
        assert_eq!(in_range_fraction(&[0.8, 0.9], 0.55, 1.0), Some(1.0));
        assert_eq!(in_range_fraction(&[], 0.55, 1.0), None);
    }

    fn speaker_manifest(spec: &[(&str, usize)]) -> (DatasetManifest, Vec<String>) {
        let mut samples = Vec::new();
        let mut ids = Vec::new();
        for (spk, n) in spec {
            for i in 0..*n {
                let mut s = crate::types::Sample::new(format!("{spk}-{i}"));
                s.speaker = Some(spk.to_string());
                ids.push(s.id.clone());
                samples.push(s);
            }
        }
        let m = DatasetManifest {
            name: "d".into(),
            samples,
            sample_rate_hz: None,
            unknown_classes: Default::default(),
        };
        (m, ids)
    }

    #[test]
    fn speaker_stats_examples() {
        let (m, ids) = speaker_manifest(&[("a", 12), ("b", 9)]);
        let labels = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), Label::value(if i % 2 == 0 { 0.4 } else { 0.6 }).unwrap()))
            .collect();
        let st = speaker_stats(&m, &labels, Task::Arousal, &SpeakerCriteria::default());
        assert_eq!(st.speakers.len(), 1);
        assert_abs_diff_eq!(
            match &st.speakers["a"] {
                SpeakerSummary::Mean(v) => *v,
                _ => unreachable!(),
            },
            0.5,
            epsilon = 1e-12
        );
        assert_eq!(st.excluded, 1);

        let (m, ids) = speaker_manifest(&[("c", 16)]);
        let labels = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), Label::class(if i < 8 { "anger" } else { "neutral" })))
            .collect();
        let criteria = SpeakerCriteria {
            classes: vec!["anger".into(), "neutral".into()],
            ..Default::default()
        };
        let st = speaker_stats(&m, &labels, Task::Categories, &criteria);
        match &st.speakers["c"] {
            SpeakerSummary::Proportions(p) => assert_eq!(p["anger"], 0.5),
            _ => unreachable!(),
        }
    }

    #[test]
    fn class_proportion_mae_examples() {
        let props = |pairs: &[(&str, &[(&str, f64)])]| -> BTreeMap<String, BTreeMap<String, f64>> {
            pairs
                .iter()
                .map(|(s, ps)| (s.to_string(), ps.iter().map(|(c, p)| (c.to_string(), *p)).collect()))
                .collect()
        };
        let t = props(&[("s1", &[("anger", 0.5)])]);
        assert_eq!(class_proportion_mae(&t, &t)["anger"], 0.0);
        let p = props(&[("s1", &[("anger", 0.4)])]);
        assert_abs_diff_eq!(class_proportion_mae(&t, &p)["anger"], 0.1, epsilon = 1e-12);
        let t2 = props(&[("s1", &[("anger", 0.5)]), ("s2", &[("anger", 0.5)])]);
        let p2 = props(&[("s1", &[("anger", 0.4)]), ("s2", &[("anger", 0.8)])]);
        assert_abs_diff_eq!(class_proportion_mae(&t2, &p2)["anger"], 0.2, epsilon = 1e-12);
    }

    /// Language-pooled and per-cell predictions with given cell means.
    fn shift_fixture(cell_means: &[(&str, &str, f64)], base_mean: f64) -> (BTreeMap<(String, String), Vec<Label>>, BTreeMap<String, Vec<Label>>) {
        let mut cells = BTreeMap::new();
        let mut langs: BTreeMap<String, Vec<Label>> = BTreeMap::new();
        for (l, s, m) in cell_means {
            cells.insert((l.to_string(), s.to_string()), vals(&[*m, *m]));
            langs.entry(l.to_string()).or_insert_with(|| vals(&[base_mean, base_mean]));
        }
        (cells, langs)
    }

    #[test]
    fn sentiment_shift_examples() {
        let spec = BinSpec::new(4).unwrap();
        // unaffected
        let (c, l) = shift_fixture(&[("de", "pos", 0.5), ("en", "pos", 0.5)], 0.5);
        let s = sentiment_shift_scores(&c, &l, Task::Valence, spec, 0).unwrap();
        assert!(s.scores.values().all(|v| v.abs() < 1e-12));
        // equally affected
        let (c, l) = shift_fixture(&[("de", "pos", 0.6), ("en", "pos", 0.6)], 0.5);
        let s = sentiment_shift_scores(&c, &l, Task::Valence, spec, 0).unwrap();
        let mean_key = |lang: &str| (lang.to_string(), "pos".to_string(), "mean".to_string());
        assert!(s.scores[&mean_key("de")].abs() < 1e-12);
        // shifts +0.10 / +0.02
        let (c, l) = shift_fixture(&[("de", "pos", 0.60), ("en", "pos", 0.52)], 0.5);
        let s = sentiment_shift_scores(&c, &l, Task::Valence, spec, 0).unwrap();
        assert_abs_diff_eq!(s.scores[&mean_key("de")], 0.04, epsilon = 1e-12);
        assert_abs_diff_eq!(s.scores[&mean_key("en")], -0.04, epsilon = 1e-12);

        let (c, l) = shift_fixture(&[("de", "pos", 0.6)], 0.5);
        assert!(sentiment_shift_scores(&c, &l, Task::Valence, spec, 0).is_err());
    }
}
