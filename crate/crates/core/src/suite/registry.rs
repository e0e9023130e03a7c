use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::SuiteError;
use crate::fairness_sim::FairnessMetric;
use crate::perturb::PerturbationSpec;
use crate::types::Task;

const DEFAULT_REGISTRY: &str = include_str!("../../data/registry.jsonl");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Correctness,
    Fairness,
    Robustness,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Correctness, Category::Fairness, Category::Robustness];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Correctness => "correctness",
            Category::Fairness => "fairness",
            Category::Robustness => "robustness",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Greater,
    Less,
    AbsLess,
    AbsGreater,
}

impl Comparison {
    /// NaN never passes.
    pub fn passes(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparison::Greater => value > threshold,
            Comparison::Less => value < threshold,
            Comparison::AbsLess => value.abs() < threshold,
            Comparison::AbsGreater => value.abs() > threshold,
        }
    }

    pub fn render(self, threshold: f64) -> String {
        match self {
            Comparison::Greater => format!("> {threshold}"),
            Comparison::Less => format!("< {threshold}"),
            Comparison::AbsLess => format!("|.| < {threshold}"),
            Comparison::AbsGreater => format!("|.| > {threshold}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    Ppc,
    Rpc,
    Uap,
    Uar,
    InRange,
    RelDiffPerClass,
    JsDistance,
    Ccc,
    Mae,
    Pcc,
    ClassProportionMae,
    SpeakerMae,
    SpearmanRho,
    DiffMean,
    RelDiffPerBin,
    DiffClassProportionShift,
    DiffBinProportionShift,
    DiffMeanShift,
    DiffPpc,
    DiffRpc,
    DiffUar,
    DiffCcc,
    DiffPrecisionPerBin,
    DiffRecallPerBin,
    ChangeUar,
    ChangeCcc,
    Unchanged,
}

impl MetricId {
    pub fn as_str(self) -> String {
        serde_json::to_value(self)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default()
    }

    /// Counterpart in the threshold simulation, for fairness metrics.
    pub fn simulated(self, category: Category) -> Option<FairnessMetric> {
        if category != Category::Fairness {
            return None;
        }
        Some(match self {
            MetricId::DiffMean => FairnessMetric::DiffMean,
            MetricId::RelDiffPerClass => FairnessMetric::RelDiffPerClass,
            MetricId::RelDiffPerBin => FairnessMetric::RelDiffPerBin,
            MetricId::DiffPpc => FairnessMetric::DiffPpc,
            MetricId::DiffRpc => FairnessMetric::DiffRpc,
            MetricId::DiffUar => FairnessMetric::DiffUar,
            MetricId::DiffCcc => FairnessMetric::DiffCcc,
            MetricId::DiffPrecisionPerBin => FairnessMetric::DiffPrecisionPerBin,
            MetricId::DiffRecallPerBin => FairnessMetric::DiffRecallPerBin,
            _ => return None,
        })
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.as_str())
    }
}

/// How a fairness test partitions its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "by", rename_all = "snake_case")]
pub enum Grouping {
    Attribute { name: String },
    Pitch { min_speaker_samples: usize },
    LanguageSentiment,
}

/// One compared condition of a robustness test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Condition {
    /// Clean audio against its perturbed version.
    Perturb { name: String, spec: PerturbationSpec },
    /// Clean audio against recordings of the same utterances from another
    /// dataset role, matched by sample id.
    Paired { name: String, dataset: String },
    /// Every response of an impulse-response set against the set's reference response.
    ImpulseResponses { name: String, set: String },
}

impl Condition {
    pub fn name(&self) -> &str {
        match self {
            Condition::Perturb { name, .. } | Condition::Paired { name, .. } | Condition::ImpulseResponses { name, .. } => {
                name
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Prerequisites {
    pub min_speakers: usize,
    pub min_samples_per_speaker: usize,
    pub min_samples_per_class: usize,
}

impl Default for Prerequisites {
    fn default() -> Self {
        Self {
            min_speakers: 6,
            min_samples_per_speaker: 10,
            min_samples_per_class: 8,
        }
    }
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    pub id: String,
    pub test: String,
    pub category: Category,
    pub task: Task,
    pub metric: MetricId,
    pub datasets: Vec<String>,
    pub comparison: Comparison,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_min: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grouping: Option<Grouping>,
    /// Balance groups to equal size and matched truth before comparing.
    #[serde(default, skip_serializing_if = "is_default")]
    pub balance: bool,
    /// Samples per group of the calibrated threshold, for fairness tests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<Calibration>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conditions: Vec<Condition>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub prerequisites: Prerequisites,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calibration {
    pub n_groups: usize,
    pub samples_per_group: usize,
}

impl TestSpec {
    fn validate(&self) -> Result<(), String> {
        if !self.threshold.is_finite() {
            return Err("threshold must be finite".into());
        }
        if self.id.is_empty() || self.test.is_empty() {
            return Err("id and test must be non-empty".into());
        }
        let fairness_metric = matches!(
            self.metric,
            MetricId::DiffMean
                | MetricId::RelDiffPerBin
                | MetricId::DiffClassProportionShift
                | MetricId::DiffBinProportionShift
                | MetricId::DiffMeanShift
                | MetricId::DiffPpc
                | MetricId::DiffRpc
                | MetricId::DiffUar
                | MetricId::DiffCcc
                | MetricId::DiffPrecisionPerBin
                | MetricId::DiffRecallPerBin
        );
        let robustness_metric = matches!(self.metric, MetricId::ChangeUar | MetricId::ChangeCcc | MetricId::Unchanged);
        match self.category {
            Category::Fairness => {
                if !(fairness_metric || self.metric == MetricId::RelDiffPerClass) {
                    return Err(format!("metric {} is not a fairness metric", self.metric));
                }
                if self.grouping.is_none() {
                    return Err("fairness tests need a grouping".into());
                }
                if self.comparison != Comparison::AbsLess {
                    return Err("fairness tests compare with abs_less".into());
                }
            }
            Category::Robustness => {
                if !robustness_metric {
                    return Err(format!("metric {} is not a robustness metric", self.metric));
                }
                if self.conditions.is_empty() {
                    return Err("robustness tests need at least one condition".into());
                }
            }
            Category::Correctness => {
                if fairness_metric || robustness_metric {
                    return Err(format!("metric {} is not a correctness metric", self.metric));
                }
            }
        }
        let dimensional_only = matches!(
            self.metric,
            MetricId::InRange
                | MetricId::JsDistance
                | MetricId::Ccc
                | MetricId::Mae
                | MetricId::Pcc
                | MetricId::SpeakerMae
                | MetricId::DiffMean
                | MetricId::RelDiffPerBin
                | MetricId::DiffBinProportionShift
                | MetricId::DiffMeanShift
                | MetricId::DiffCcc
                | MetricId::DiffPrecisionPerBin
                | MetricId::DiffRecallPerBin
                | MetricId::ChangeCcc
        );
        let categorical_only = matches!(
            self.metric,
            MetricId::Ppc
                | MetricId::Rpc
                | MetricId::Uap
                | MetricId::Uar
                | MetricId::ClassProportionMae
                | MetricId::DiffClassProportionShift
                | MetricId::DiffPpc
                | MetricId::DiffRpc
                | MetricId::DiffUar
                | MetricId::ChangeUar
        );
        if (dimensional_only && !self.task.is_dimensional()) || (categorical_only && self.task.is_dimensional()) {
            return Err(format!("metric {} does not apply to task {}", self.metric, self.task));
        }
        if let Some(b) = self.bins {
            if b < 2 {
                return Err("bins must be at least 2".into());
            }
        }
        for c in &self.conditions {
            if let Condition::Perturb { spec, .. } = c {
                spec.validate().map_err(|e| e.to_string())?;
            }
        }
        Ok(())
    }
}

/// Parsed registry with the hash of its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    pub specs: Vec<TestSpec>,
    pub hash: String,
}

impl Registry {
    pub fn builtin() -> Self {
        parse_registry(DEFAULT_REGISTRY, "<builtin>").expect("builtin registry is valid")
    }

    pub fn get(&self, id: &str) -> Option<&TestSpec> {
        self.specs.iter().find(|s| s.id == id)
    }

    /// Rows matching a test name, task and metric.
    pub fn find(&self, test: &str, task: Task, metric: MetricId) -> Option<&TestSpec> {
        self.specs
            .iter()
            .find(|s| s.test == test && s.task == task && s.metric == metric)
    }

    pub fn filter_tasks(&self, tasks: &[Task]) -> Self {
        Self {
            specs: self.specs.iter().filter(|s| tasks.contains(&s.task)).cloned().collect(),
            hash: self.hash.clone(),
        }
    }
}

/// Load a registry file, or the built-in one for `None`.
pub fn load_registry(path: Option<&Path>) -> Result<Registry, SuiteError> {
    match path {
        None => Ok(Registry::builtin()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| SuiteError::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            parse_registry(&text, &p.display().to_string())
        }
    }
}

/// JSONL, one test spec per line; blank lines and `#` comments are ignored.
pub fn parse_registry(text: &str, origin: &str) -> Result<Registry, SuiteError> {
    let mut specs: Vec<TestSpec> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = i + 1;
        let err = |message: String| SuiteError::Registry {
            origin: origin.to_string(),
            row,
            message,
        };
        let spec: TestSpec = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        spec.validate().map_err(err)?;
        if specs.iter().any(|s| s.id == spec.id) {
            return Err(err(format!("duplicate id `{}`", spec.id)));
        }
        specs.push(spec);
    }
    if specs.is_empty() {
        return Err(SuiteError::Registry {
            origin: origin.to_string(),
            row: 0,
            message: "no tests".into(),
        });
    }
    Ok(Registry {
        specs,
        hash: hex::encode(Sha256::digest(text.as_bytes())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_parses() {
        let r = Registry::builtin();
        assert!(r.specs.len() > 50);
        let ccc = r.find("Fairness Pitch", Task::Arousal, MetricId::DiffCcc).unwrap();
        assert_eq!(ccc.threshold, 0.1);
        assert_eq!(ccc.comparison, Comparison::AbsLess);
    }

    #[test]
    fn malformed_rows_report_their_line() {
        let good = serde_json::to_string(&Registry::builtin().specs[0]).unwrap();
        let text = format!("# header\n{good}\n{{\"id\": 3}}\n");
        match parse_registry(&text, "x.jsonl") {
            Err(SuiteError::Registry { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        let dup = format!("{good}\n{good}\n");
        assert!(parse_registry(&dup, "x").unwrap_err().to_string().contains("duplicate"));
    }

    #[test]
    fn inconsistent_rows_are_rejected() {
        let mut s = Registry::builtin().find("Correctness Regression", Task::Valence, MetricId::Ccc).unwrap().clone();
        s.task = Task::Categories;
        let text = serde_json::to_string(&s).unwrap();
        assert!(parse_registry(&text, "x").is_err());
    }

    #[test]
    fn comparison_semantics() {
        assert!(Comparison::Greater.passes(0.62, 0.5));
        assert!(!Comparison::Greater.passes(0.5, 0.5));
        assert!(!Comparison::AbsLess.passes(-0.10, 0.075));
        assert!(Comparison::AbsGreater.passes(-0.8, 0.7));
        assert!(!Comparison::Less.passes(f64::NAN, 1.0));
    }
}
