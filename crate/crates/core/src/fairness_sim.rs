//! Fairness threshold calibration from random-model simulations, and group balancing.
//!
//! A model that samples its outputs at random has no bias towards any group,
//! yet finite groups still show disparities. The largest disparity such a
//! model produces over many repeats is used as the test threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::metrics;
use crate::types::{DatasetManifest, GroupPartition, Label, Task};

/// Bins used by the per-bin fairness metrics.
pub const FAIRNESS_BINS: usize = 4;
pub const DEFAULT_REPEATS: usize = 1000;
pub const GAUSSIAN_MEAN: f64 = 0.5;
pub const GAUSSIAN_STD: f64 = 1.0 / 6.0;
pub const SPARSE_PROBS: [f64; 4] = [0.05, 0.05, 0.3, 0.6];

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("metric `{0}` cannot be simulated")]
    Unsupported(String),
    #[error("metric {0} needs a truth distribution")]
    MissingTruth(FairnessMetric),
    #[error("random model `{model}` does not fit metric {metric}")]
    ModelMismatch { metric: FairnessMetric, model: String },
    #[error("invalid random model: {0}")]
    InvalidModel(String),
    #[error("{0} must be at least 1")]
    Zero(&'static str),
    #[error("group `{group}` has {size} labelled samples, fewer than the target {target}")]
    GroupTooSmall { group: String, size: usize, target: usize },
    #[error("threshold table: {0}")]
    Table(String),
}

/// Distribution a random model draws its outputs from.
#[derive(Debug, Clone, PartialEq)]
pub enum RandomModel {
    /// Normal distribution truncated to `[0, 1]` by rejection.
    TruncatedGaussian { mean: f64, std: f64 },
    Categorical { probs: Vec<f64> },
}

impl RandomModel {
    pub fn gaussian() -> Self {
        RandomModel::TruncatedGaussian {
            mean: GAUSSIAN_MEAN,
            std: GAUSSIAN_STD,
        }
    }

    pub fn uniform(n_classes: usize) -> Self {
        RandomModel::Categorical {
            probs: vec![1.0 / n_classes as f64; n_classes],
        }
    }

    pub fn sparse() -> Self {
        RandomModel::Categorical {
            probs: SPARSE_PROBS.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        match self {
            RandomModel::TruncatedGaussian { mean, std } => {
                if !(*std > 0.0) || !mean.is_finite() {
                    return Err(SimError::InvalidModel(format!("std must be > 0, got {std}")));
                }
            }
            RandomModel::Categorical { probs } => {
                let sum: f64 = probs.iter().sum();
                if probs.is_empty() || probs.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
                    return Err(SimError::InvalidModel(format!("probabilities must sum to 1, got {sum}")));
                }
            }
        }
        Ok(())
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, RandomModel::Categorical { .. })
    }

    pub fn n_classes(&self) -> usize {
        match self {
            RandomModel::Categorical { probs } => probs.len(),
            RandomModel::TruncatedGaussian { .. } => 0,
        }
    }

    fn normal(&self) -> Option<Normal<f64>> {
        match self {
            RandomModel::TruncatedGaussian { mean, std } => Normal::new(*mean, *std).ok(),
            _ => None,
        }
    }
}

impl fmt::Display for RandomModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RandomModel::TruncatedGaussian { mean, std } => {
                if *self == RandomModel::gaussian() {
                    f.write_str("gaussian_truncated")
                } else {
                    write!(f, "gaussian_truncated({mean}:{std})")
                }
            }
            RandomModel::Categorical { probs } => {
                if *self == RandomModel::sparse() {
                    f.write_str("categorical_sparse")
                } else if probs.iter().all(|p| (p - probs[0]).abs() < 1e-12) {
                    write!(f, "categorical_uniform({})", probs.len())
                } else {
                    let ps: Vec<String> = probs.iter().map(|p| p.to_string()).collect();
                    write!(f, "categorical({})", ps.join(":"))
                }
            }
        }
    }
}

impl FromStr for RandomModel {
    type Err = SimError;

    /// Accepts `gaussian_truncated`, `gaussian_truncated(mean:std)`,
    /// `categorical_uniform`, `categorical_uniform(n)`, `categorical_sparse`
    /// and `categorical(p1:p2:...)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(i) if s.ends_with(')') => (&s[..i], Some(&s[i + 1..s.len() - 1])),
            _ => (s, None),
        };
        let nums = |a: &str| -> Result<Vec<f64>, SimError> {
            a.split(':')
                .map(|x| x.trim().parse::<f64>().map_err(|_| SimError::InvalidModel(s.to_string())))
                .collect()
        };
        let model = match (name, args) {
            ("gaussian_truncated", None) => RandomModel::gaussian(),
            ("gaussian_truncated", Some(a)) => match nums(a)?.as_slice() {
                [mean, std] => RandomModel::TruncatedGaussian { mean: *mean, std: *std },
                _ => return Err(SimError::InvalidModel(s.to_string())),
            },
            ("categorical_uniform", None) => RandomModel::uniform(4),
            ("categorical_uniform", Some(a)) => {
                RandomModel::uniform(a.trim().parse().map_err(|_| SimError::InvalidModel(s.to_string()))?)
            }
            ("categorical_sparse", None) => RandomModel::sparse(),
            ("categorical", Some(a)) => RandomModel::Categorical { probs: nums(a)? },
            _ => return Err(SimError::InvalidModel(s.to_string())),
        };
        model.validate()?;
        Ok(model)
    }
}

/// Class name used for category `i` of a random categorical model.
pub fn random_class_name(i: usize) -> String {
    format!("c{i}")
}

enum Draws {
    Values(Vec<f64>),
    Classes(Vec<usize>),
}

fn draw<R: Rng>(model: &RandomModel, normal: Option<&Normal<f64>>, n: usize, rng: &mut R) -> Draws {
    match model {
        RandomModel::TruncatedGaussian { .. } => {
            let normal = normal.expect("gaussian model has a normal distribution");
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let x = normal.sample(rng);
                if (0.0..=1.0).contains(&x) {
                    out.push(x);
                }
            }
            Draws::Values(out)
        }
        RandomModel::Categorical { probs } => {
            let out = (0..n)
                .map(|_| {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    for (i, p) in probs.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            return i;
                        }
                    }
                    probs.len() - 1
                })
                .collect();
            Draws::Classes(out)
        }
    }
}

/// Draw `n` outputs of a random model. Deterministic for a fixed seed.
pub fn sample_random_predictions(model: &RandomModel, n: usize, seed: u64) -> Result<Vec<Label>, SimError> {
    model.validate()?;
    if n == 0 {
        return Err(SimError::Zero("n"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = model.normal();
    Ok(match draw(model, normal.as_ref(), n, &mut rng) {
        Draws::Values(v) => v.into_iter().map(|x| Label::value(x).expect("within [0, 1]")).collect(),
        Draws::Classes(c) => c.into_iter().map(|i| Label::Class(random_class_name(i))).collect(),
    })
}

/// Expected count in the lowest of four bins for `n` draws of N(0.5, 1/6),
/// rounded: `round(Φ(-1.5) · n)`.
pub fn n_min_bin(n: usize) -> usize {
    let z = (0.25 - GAUSSIAN_MEAN) / GAUSSIAN_STD;
    (standard_normal_cdf(z) * n as f64).round() as usize
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Fairness metrics that can be calibrated by simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FairnessMetric {
    DiffMean,
    RelDiffPerClass,
    RelDiffPerBin,
    DiffCcc,
    DiffUar,
    DiffPpc,
    DiffRpc,
    DiffPrecisionPerBin,
    DiffRecallPerBin,
}

impl FairnessMetric {
    pub const ALL: [FairnessMetric; 9] = [
        FairnessMetric::DiffMean,
        FairnessMetric::RelDiffPerClass,
        FairnessMetric::RelDiffPerBin,
        FairnessMetric::DiffCcc,
        FairnessMetric::DiffUar,
        FairnessMetric::DiffPpc,
        FairnessMetric::DiffRpc,
        FairnessMetric::DiffPrecisionPerBin,
        FairnessMetric::DiffRecallPerBin,
    ];

    pub fn id(self) -> &'static str {
        match self {
            FairnessMetric::DiffMean => "diff_mean",
            FairnessMetric::RelDiffPerClass => "rel_diff_per_class",
            FairnessMetric::RelDiffPerBin => "rel_diff_per_bin",
            FairnessMetric::DiffCcc => "diff_ccc",
            FairnessMetric::DiffUar => "diff_uar",
            FairnessMetric::DiffPpc => "diff_ppc",
            FairnessMetric::DiffRpc => "diff_rpc",
            FairnessMetric::DiffPrecisionPerBin => "diff_precision_per_bin",
            FairnessMetric::DiffRecallPerBin => "diff_recall_per_bin",
        }
    }

    pub fn needs_truth(self) -> bool {
        !matches!(
            self,
            FairnessMetric::DiffMean | FairnessMetric::RelDiffPerClass | FairnessMetric::RelDiffPerBin
        )
    }

    pub fn is_categorical(self) -> bool {
        matches!(
            self,
            FairnessMetric::RelDiffPerClass | FairnessMetric::DiffUar | FairnessMetric::DiffPpc | FairnessMetric::DiffRpc
        )
    }

    pub fn is_binned(self) -> bool {
        matches!(
            self,
            FairnessMetric::RelDiffPerBin | FairnessMetric::DiffPrecisionPerBin | FairnessMetric::DiffRecallPerBin
        )
    }

    /// Default random model for predictions.
    pub fn default_model(self) -> RandomModel {
        if self.is_categorical() {
            RandomModel::uniform(4)
        } else {
            RandomModel::gaussian()
        }
    }
}

impl fmt::Display for FairnessMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for FairnessMetric {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FairnessMetric::ALL
            .into_iter()
            .find(|m| m.id() == s.trim())
            .ok_or_else(|| SimError::Unsupported(s.to_string()))
    }
}

/// Per-key metric values of one set of draws; `None` where undefined or masked.
fn keyed_values(
    metric: FairnessMetric,
    truth: Option<&Draws>,
    pred: &Draws,
    n_classes: usize,
    mask: Option<&[bool]>,
) -> Vec<Option<f64>> {
    let bins = crate::types::BinSpec::new(FAIRNESS_BINS).expect("valid bin count");
    let to_classes = |d: &Draws| -> Vec<usize> {
        match d {
            Draws::Classes(c) => c.clone(),
            Draws::Values(v) => v.iter().map(|x| bins.index(*x)).collect(),
        }
    };
    let masked = |mut vals: Vec<Option<f64>>| {
        if let Some(mask) = mask {
            for (v, keep) in vals.iter_mut().zip(mask) {
                if !keep {
                    *v = None;
                }
            }
        }
        vals
    };
    match metric {
        FairnessMetric::DiffMean => match pred {
            Draws::Values(v) => vec![Some(metrics::mean(v))],
            Draws::Classes(_) => vec![None],
        },
        FairnessMetric::DiffCcc => match (truth, pred) {
            (Some(Draws::Values(t)), Draws::Values(p)) => vec![metrics::concordance_corr(t, p).ok()],
            _ => vec![None],
        },
        FairnessMetric::RelDiffPerClass | FairnessMetric::RelDiffPerBin => {
            let classes = to_classes(pred);
            let mut counts = vec![0usize; n_classes];
            for c in &classes {
                counts[*c] += 1;
            }
            masked(counts.iter().map(|&c| Some(c as f64 / classes.len() as f64)).collect())
        }
        FairnessMetric::DiffUar
        | FairnessMetric::DiffPpc
        | FairnessMetric::DiffRpc
        | FairnessMetric::DiffPrecisionPerBin
        | FairnessMetric::DiffRecallPerBin => {
            let t = to_classes(truth.expect("truth checked before simulation"));
            let p = to_classes(pred);
            let mut confusion = vec![vec![0usize; n_classes]; n_classes];
            for (a, b) in t.iter().zip(&p) {
                confusion[*a][*b] += 1;
            }
            let recall: Vec<Option<f64>> = (0..n_classes)
                .map(|c| {
                    let n: usize = confusion[c].iter().sum();
                    (n > 0).then(|| confusion[c][c] as f64 / n as f64)
                })
                .collect();
            let precision: Vec<Option<f64>> = (0..n_classes)
                .map(|c| {
                    let n: usize = (0..n_classes).map(|r| confusion[r][c]).sum();
                    (n > 0).then(|| confusion[c][c] as f64 / n as f64)
                })
                .collect();
            match metric {
                FairnessMetric::DiffUar => {
                    let defined: Vec<f64> = recall.iter().flatten().copied().collect();
                    vec![(!defined.is_empty()).then(|| metrics::mean(&defined))]
                }
                FairnessMetric::DiffRpc | FairnessMetric::DiffRecallPerBin => masked(recall),
                _ => masked(precision),
            }
        }
    }
}

fn slice(d: &Draws, lo: usize, hi: usize) -> Draws {
    match d {
        Draws::Values(v) => Draws::Values(v[lo..hi].to_vec()),
        Draws::Classes(c) => Draws::Classes(c[lo..hi].to_vec()),
    }
}

/// Bins with enough reference samples; counts truth for recall/precision metrics.
fn bin_mask(metric: FairnessMetric, truth: Option<&Draws>, pred: &Draws, n_min: usize) -> Option<Vec<bool>> {
    if !metric.is_binned() {
        return None;
    }
    let bins = crate::types::BinSpec::new(FAIRNESS_BINS).expect("valid bin count");
    let source = if metric == FairnessMetric::RelDiffPerBin { Some(pred) } else { truth };
    let Some(Draws::Values(v)) = source else { return None };
    Some(metrics::bin_values(v, bins).into_iter().map(|c| c >= n_min).collect())
}

fn check_models(metric: FairnessMetric, model: &RandomModel, truth: Option<&RandomModel>) -> Result<(), SimError> {
    model.validate()?;
    let mismatch = |m: &RandomModel| SimError::ModelMismatch {
        metric,
        model: m.to_string(),
    };
    if metric.is_categorical() != model.is_categorical() {
        return Err(mismatch(model));
    }
    if metric.needs_truth() {
        let t = truth.ok_or(SimError::MissingTruth(metric))?;
        t.validate()?;
        if t.is_categorical() != model.is_categorical() || (t.is_categorical() && t.n_classes() != model.n_classes()) {
            return Err(mismatch(t));
        }
    }
    Ok(())
}

/// Largest deviation of any group from the pool, for one repeat.
fn simulate_once(
    metric: FairnessMetric,
    n_groups: usize,
    samples_per_group: usize,
    model: &RandomModel,
    truth: Option<&RandomModel>,
    seed: u64,
    repeat: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repeat);
    let total = n_groups * samples_per_group;
    let model_normal = model.normal();
    let truth_normal = truth.and_then(RandomModel::normal);
    let truth_draws = if metric.needs_truth() {
        truth.map(|t| draw(t, truth_normal.as_ref(), total, &mut rng))
    } else {
        None
    };
    let pred = draw(model, model_normal.as_ref(), total, &mut rng);
    let n_classes = if metric.is_binned() { FAIRNESS_BINS } else { model.n_classes() };
    let mask = bin_mask(metric, truth_draws.as_ref(), &pred, n_min_bin(samples_per_group));
    let pool = keyed_values(metric, truth_draws.as_ref(), &pred, n_classes, mask.as_deref());
    let mut worst: f64 = 0.0;
    for g in 0..n_groups {
        let (lo, hi) = (g * samples_per_group, (g + 1) * samples_per_group);
        let gt = truth_draws.as_ref().map(|t| slice(t, lo, hi));
        let gp = slice(&pred, lo, hi);
        let vals = keyed_values(metric, gt.as_ref(), &gp, n_classes, mask.as_deref());
        for (a, b) in vals.iter().zip(&pool) {
            if let (Some(a), Some(b)) = (a, b) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

/// Maximum over `repeats` of the largest group-vs-pool deviation of a random model.
///
/// Repeat `r` uses ChaCha stream `r` of `seed`, so results do not depend on
/// evaluation order.
pub fn simulate_threshold(
    metric: FairnessMetric,
    n_groups: usize,
    samples_per_group: usize,
    model: &RandomModel,
    truth: Option<&RandomModel>,
    repeats: usize,
    seed: u64,
) -> Result<f64, SimError> {
    check_models(metric, model, truth)?;
    if n_groups == 0 {
        return Err(SimError::Zero("n_groups"));
    }
    if samples_per_group == 0 {
        return Err(SimError::Zero("samples_per_group"));
    }
    if repeats == 0 {
        return Err(SimError::Zero("repeats"));
    }
    let run = |r: usize| simulate_once(metric, n_groups, samples_per_group, model, truth, seed, r as u64);
    #[cfg(feature = "parallel")]
    let worst = {
        use rayon::prelude::*;
        (0..repeats).into_par_iter().map(run).reduce(|| 0.0, f64::max)
    };
    #[cfg(not(feature = "parallel"))]
    let worst = (0..repeats).map(run).fold(0.0, f64::max);
    Ok(worst)
}

/// One calibrated threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub metric: FairnessMetric,
    pub n_groups: usize,
    pub samples_per_group: usize,
    pub model: String,
    /// Empty for metrics that ignore the ground truth.
    pub truth: Option<String>,
    /// Threshold applied by tests.
    pub threshold: f64,
    /// Raw simulated value.
    pub simulated: f64,
    pub repeats: usize,
    pub seed: u64,
}

/// Thresholds keyed by (metric, groups, samples per group, model, truth).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ThresholdTable {
    pub entries: Vec<ThresholdEntry>,
}

impl ThresholdTable {
    /// Tab-separated, one row per key tuple, with a header row.
    pub fn write(&self, out: impl Write) -> Result<(), SimError> {
        let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(out);
        for e in &self.entries {
            w.serialize(e).map_err(|e| SimError::Table(e.to_string()))?;
        }
        w.flush().map_err(|e| SimError::Table(e.to_string()))
    }

    pub fn read(input: impl Read) -> Result<Self, SimError> {
        let mut r = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .comment(Some(b'#'))
            .from_reader(input);
        let mut entries = Vec::new();
        for (i, row) in r.deserialize().enumerate() {
            let e: ThresholdEntry = row.map_err(|e| SimError::Table(format!("row {}: {e}", i + 1)))?;
            if !(e.threshold >= 0.0) {
                return Err(SimError::Table(format!("row {}: negative threshold", i + 1)));
            }
            entries.push(e);
        }
        Ok(Self { entries })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        buf
    }

    /// Hex SHA-256 of the serialized table.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    /// Entry for a key, with `samples_per_group` rounded down to the table grid.
    pub fn lookup(
        &self,
        metric: FairnessMetric,
        n_groups: usize,
        samples_per_group: usize,
        model: &str,
        truth: Option<&str>,
    ) -> Option<&ThresholdEntry> {
        self.entries
            .iter()
            .filter(|e| {
                e.metric == metric
                    && e.n_groups == n_groups
                    && e.samples_per_group <= samples_per_group
                    && e.model == model
                    && e.truth.as_deref() == truth
            })
            .max_by_key(|e| e.samples_per_group)
    }

    pub fn insert(&mut self, entry: ThresholdEntry) {
        self.entries.retain(|e| {
            !(e.metric == entry.metric
                && e.n_groups == entry.n_groups
                && e.samples_per_group == entry.samples_per_group
                && e.model == entry.model
                && e.truth == entry.truth)
        });
        self.entries.push(entry);
    }
}

/// Simulate a groups x samples-per-group grid; thresholds equal the simulated values.
pub fn simulate_grid(
    metric: FairnessMetric,
    groups: &[usize],
    samples: &[usize],
    model: &RandomModel,
    truth: Option<&RandomModel>,
    repeats: usize,
    seed: u64,
) -> Result<ThresholdTable, SimError> {
    let mut table = ThresholdTable::default();
    for &g in groups {
        for &n in samples {
            let v = simulate_threshold(metric, g, n, model, truth, repeats, seed)?;
            table.entries.push(ThresholdEntry {
                metric,
                n_groups: g,
                samples_per_group: n,
                model: model.to_string(),
                truth: truth.filter(|_| metric.needs_truth()).map(|t| t.to_string()),
                threshold: v,
                simulated: v,
                repeats,
                seed,
            });
        }
    }
    Ok(table)
}

/// Reduce every group to `target_n` labelled samples with matching truth distributions.
///
/// The smallest group is downsampled uniformly. Other groups are matched to it:
/// dimensional tasks by greedy nearest-neighbour matching on the gold value
/// (reference samples visited in random order, no replacement), categorical
/// tasks by drawing the reference group's class counts.
pub fn balance_groups(
    manifest: &DatasetManifest,
    partition: &GroupPartition,
    task: Task,
    target_n: usize,
    seed: u64,
) -> Result<GroupPartition, SimError> {
    if target_n == 0 {
        return Err(SimError::Zero("target_n"));
    }
    let index = manifest.index();
    let gold = |id: &str| index.get(id).and_then(|s| s.gold.get(&task));
    let mut excluded = partition.excluded.clone();
    let mut labelled: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (name, ids) in &partition.groups {
        let mut keep = Vec::new();
        for id in ids {
            if gold(id).is_some() {
                keep.push(id.as_str());
            } else {
                excluded.push(id.clone());
            }
        }
        labelled.insert(name.as_str(), keep);
    }
    let (smallest, small_ids) = labelled
        .iter()
        .min_by_key(|(_, ids)| ids.len())
        .map(|(n, ids)| (*n, ids.clone()))
        .ok_or_else(|| SimError::GroupTooSmall {
            group: String::new(),
            size: 0,
            target: target_n,
        })?;
    if small_ids.len() < target_n {
        return Err(SimError::GroupTooSmall {
            group: smallest.to_string(),
            size: small_ids.len(),
            target: target_n,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reference = small_ids.clone();
    reference.shuffle(&mut rng);
    reference.truncate(target_n);

    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (name, ids) in &labelled {
        let chosen: Vec<&str> = if *name == smallest {
            reference.clone()
        } else if task.is_dimensional() {
            match_values(&reference, ids, |id| gold(id).and_then(Label::as_value).unwrap_or(0.0), &mut rng)
        } else {
            match_classes(
                &reference,
                ids,
                |id| gold(id).and_then(Label::as_class).unwrap_or("").to_string(),
                &mut rng,
            )
        };
        let picked: BTreeSet<&str> = chosen.iter().copied().collect();
        excluded.extend(ids.iter().filter(|id| !picked.contains(*id)).map(|id| id.to_string()));
        out.insert(name.to_string(), chosen.into_iter().map(str::to_string).collect());
    }
    let order: BTreeMap<&str, usize> = manifest.samples.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let pos = |id: &String| order.get(id.as_str()).copied().unwrap_or(usize::MAX);
    for ids in out.values_mut() {
        ids.sort_by_key(pos);
    }
    excluded.sort_by_key(pos);
    Ok(GroupPartition {
        attribute: partition.attribute.clone(),
        groups: out,
        excluded,
    })
}

fn match_values<'a, R: Rng>(
    reference: &[&'a str],
    candidates: &[&'a str],
    value: impl Fn(&str) -> f64,
    rng: &mut R,
) -> Vec<&'a str> {
    // Gold values lie in [0, 1]; for non-negative floats the bit pattern orders like the value.
    let mut available: BTreeSet<(u64, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(i, id)| (value(id).to_bits(), i))
        .collect();
    let mut visit: Vec<&str> = reference.to_vec();
    visit.shuffle(rng);
    let mut chosen = Vec::with_capacity(reference.len());
    for r in visit {
        if available.is_empty() {
            break;
        }
        let target = value(r);
        let key = (target.to_bits(), 0);
        let above = available.range(key..).next().copied();
        let below = available.range(..key).next_back().copied();
        let dist = |k: (u64, usize)| (f64::from_bits(k.0) - target).abs();
        let pick = match (below, above) {
            (Some(b), Some(a)) => {
                if dist(b) <= dist(a) {
                    b
                } else {
                    a
                }
            }
            (Some(b), None) => b,
            (None, Some(a)) => a,
            (None, None) => unreachable!(),
        };
        available.remove(&pick);
        chosen.push(candidates[pick.1]);
    }
    chosen
}

fn match_classes<'a, R: Rng>(
    reference: &[&'a str],
    candidates: &[&'a str],
    class: impl Fn(&str) -> String,
    rng: &mut R,
) -> Vec<&'a str> {
    let mut wanted: BTreeMap<String, usize> = BTreeMap::new();
    for r in reference {
        *wanted.entry(class(r)).or_default() += 1;
    }
    let mut by_class: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for c in candidates {
        by_class.entry(class(c)).or_default().push(c);
    }
    let mut chosen = Vec::with_capacity(reference.len());
    let mut leftovers = Vec::new();
    for (cls, mut pool) in by_class {
        pool.shuffle(rng);
        let k = wanted.get(&cls).copied().unwrap_or(0).min(pool.len());
        chosen.extend_from_slice(&pool[..k]);
        leftovers.extend_from_slice(&pool[k..]);
    }
    // shortfall in some class is filled at random
    leftovers.shuffle(rng);
    let missing = reference.len().saturating_sub(chosen.len());
    chosen.extend(leftovers.into_iter().take(missing));
    chosen
}
