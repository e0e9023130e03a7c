//! Domain types shared by every part of the harness.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Emotion prediction task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Arousal,
    Dominance,
    Valence,
    Categories,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Arousal, Task::Dominance, Task::Valence, Task::Categories];

    pub fn is_dimensional(self) -> bool {
        !matches!(self, Task::Categories)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Arousal => "arousal",
            Task::Dominance => "dominance",
            Task::Valence => "valence",
            Task::Categories => "categories",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "arousal" => Ok(Task::Arousal),
            "dominance" => Ok(Task::Dominance),
            "valence" => Ok(Task::Valence),
            "categories" | "emotion" => Ok(Task::Categories),
            other => Err(TypeError::UnknownTask(other.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TypeError {
    #[error("value out of range [0, 1]: {0}")]
    ValueOutOfRange(f64),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("bin count must be at least 2, got {0}")]
    TooFewBins(usize),
}

/// A dimensional value guaranteed to lie in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct UnitValue(f64);

impl UnitValue {
    pub fn new(value: f64) -> Result<Self, TypeError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(TypeError::ValueOutOfRange(value))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl<'de> Deserialize<'de> for UnitValue {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        UnitValue::new(v).map_err(serde::de::Error::custom)
    }
}

/// Gold or predicted label: an emotion category or a dimensional value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Value(UnitValue),
    Class(String),
}

impl Label {
    pub fn value(v: f64) -> Result<Self, TypeError> {
        UnitValue::new(v).map(Label::Value)
    }

    pub fn class(c: impl Into<String>) -> Self {
        Label::Class(c.into())
    }

    pub fn as_value(&self) -> Option<f64> {
        match self {
            Label::Value(v) => Some(v.get()),
            Label::Class(_) => None,
        }
    }

    pub fn as_class(&self) -> Option<&str> {
        match self {
            Label::Class(c) => Some(c),
            Label::Value(_) => None,
        }
    }

    /// Whether the label variant fits the task.
    pub fn matches(&self, task: Task) -> bool {
        matches!(
            (self, task.is_dimensional()),
            (Label::Value(_), true) | (Label::Class(_), false)
        )
    }
}

/// Free-form sample attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Number(f64),
    Text(String),
}

impl AttrValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            AttrValue::Number(n) => Some(*n),
            AttrValue::Text(s) => s.parse().ok(),
        }
    }

    /// Group key used when partitioning. Integral numbers print without a fraction.
    pub fn group_key(&self) -> String {
        match self {
            AttrValue::Text(s) => s.clone(),
            AttrValue::Number(n) if n.fract() == 0.0 && n.abs() < 1e15 => format!("{}", *n as i64),
            AttrValue::Number(n) => n.to_string(),
        }
    }
}

/// Well-known attribute keys.
pub mod attr {
    pub const SEX: &str = "sex";
    pub const LANGUAGE: &str = "language";
    pub const ACCENT: &str = "accent";
    pub const SENTIMENT: &str = "sentiment";
    pub const MEAN_F0_HZ: &str = "mean_f0_hz";
    /// Category used by consistency tests when no categorical gold label is present.
    pub const CATEGORY: &str = "category";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub gold: BTreeMap<Task, Label>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, AttrValue>,
}

impl Sample {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            audio_path: None,
            speaker: None,
            gold: BTreeMap::new(),
            attrs: BTreeMap::new(),
        }
    }

    pub fn attr(&self, key: &str) -> Option<&AttrValue> {
        self.attrs.get(key)
    }

    /// Category for consistency checks: categorical gold first, `category` attribute second.
    pub fn category(&self) -> Option<String> {
        if let Some(Label::Class(c)) = self.gold.get(&Task::Categories) {
            return Some(c.clone());
        }
        self.attrs.get(attr::CATEGORY).map(AttrValue::group_key)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub samples: Vec<Sample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate_hz: Option<u32>,
    /// Classes seen at ingestion that are outside the known vocabulary.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub unknown_classes: BTreeSet<String>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn index(&self) -> BTreeMap<&str, &Sample> {
        self.samples.iter().map(|s| (s.id.as_str(), s)).collect()
    }

    /// Gold labels for `task`, keyed by sample id. Samples without gold are skipped.
    pub fn gold(&self, task: Task) -> BTreeMap<String, Label> {
        self.samples
            .iter()
            .filter_map(|s| s.gold.get(&task).map(|l| (s.id.clone(), l.clone())))
            .collect()
    }

    /// Restrict to the given ids, keeping manifest order.
    pub fn subset(&self, ids: &BTreeSet<&str>) -> DatasetManifest {
        DatasetManifest {
            name: self.name.clone(),
            samples: self
                .samples
                .iter()
                .filter(|s| ids.contains(s.id.as_str()))
                .cloned()
                .collect(),
            sample_rate_hz: self.sample_rate_hz,
            unknown_classes: self.unknown_classes.clone(),
        }
    }
}

/// Predictions of one model for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub model_id: String,
    pub task: Task,
    pub predictions: BTreeMap<String, Label>,
}

impl PredictionSet {
    pub fn new(model_id: impl Into<String>, task: Task) -> Self {
        Self {
            model_id: model_id.into(),
            task,
            predictions: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Label> {
        self.predictions.get(id)
    }

    /// Insert a label, refusing variants that do not fit the task.
    pub fn insert(&mut self, id: impl Into<String>, label: Label) -> bool {
        if !label.matches(self.task) {
            return false;
        }
        self.predictions.insert(id.into(), label);
        true
    }
}

/// Evenly spaced bins over `[0, 1]`; the last bin is closed at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinSpec {
    n_bins: usize,
}

impl BinSpec {
    pub fn new(n_bins: usize) -> Result<Self, TypeError> {
        if n_bins < 2 {
            return Err(TypeError::TooFewBins(n_bins));
        }
        Ok(Self { n_bins })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn index(&self, value: f64) -> usize {
        let v = value.clamp(0.0, 1.0);
        ((v * self.n_bins as f64).floor() as usize).min(self.n_bins - 1)
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.n_bins)
            .map(|i| i as f64 / self.n_bins as f64)
            .collect()
    }

    pub fn key(index: usize) -> String {
        format!("bin-{index}")
    }
}

/// Samples grouped by a protected attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPartition {
    pub attribute: String,
    pub groups: BTreeMap<String, Vec<String>>,
    /// Samples lacking the attribute (or with an unusable value).
    #[serde(default)]
    pub excluded: Vec<String>,
}

impl GroupPartition {
    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn min_group_size(&self) -> usize {
        self.groups.values().map(Vec::len).min().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.groups.values().map(Vec::len).sum::<usize>() + self.excluded.len()
    }

    /// All grouped ids, in group order.
    pub fn pooled(&self) -> Vec<&str> {
        self.groups
            .values()
            .flat_map(|ids| ids.iter().map(String::as_str))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_value_rejects_out_of_range() {
        assert!(UnitValue::new(1.3).is_err());
        assert!(UnitValue::new(-0.01).is_err());
        assert!(UnitValue::new(f64::NAN).is_err());
        assert_eq!(UnitValue::new(1.0).unwrap().get(), 1.0);
    }

    #[test]
    fn label_json_shapes() {
        let v: Label = serde_json::from_str("0.25").unwrap();
        assert_eq!(v.as_value(), Some(0.25));
        let c: Label = serde_json::from_str("\"anger\"").unwrap();
        assert_eq!(c.as_class(), Some("anger"));
        assert!(serde_json::from_str::<Label>("1.5").is_err());
    }

    #[test]
    fn bin_index_edges() {
        let spec = BinSpec::new(4).unwrap();
        assert_eq!(spec.index(0.0), 0);
        assert_eq!(spec.index(0.25), 1);
        assert_eq!(spec.index(0.9999), 3);
        assert_eq!(spec.index(1.0), 3);
        assert!(BinSpec::new(1).is_err());
        assert_eq!(spec.edges(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn task_parsing() {
        assert_eq!("Valence".parse::<Task>().unwrap(), Task::Valence);
        assert!("pleasure".parse::<Task>().is_err());
    }

    #[test]
    fn prediction_set_refuses_mismatched_label() {
        let mut set = PredictionSet::new("m", Task::Valence);
        assert!(!set.insert("s1", Label::class("anger")));
        assert!(set.insert("s1", Label::value(0.3).unwrap()));
        assert_eq!(set.len(), 1);
    }
}
