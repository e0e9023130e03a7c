//! Line-delimited manifest and prediction file ingestion.
//!
//! Manifest lines:
//!
//! ```text
//! {"dataset": "iemocap", "sample_rate_hz": 16000}            <- optional header, first line only
//! {"id": "s1", "audio_path": "a/s1.wav", "speaker": "spk1",
//!  "gold": {"valence": 0.2, "categories": "anger"},
//!  "attrs": {"sex": "female", "mean_f0_hz": 181.5}}
//! ```
//!
//! Prediction lines: `{"id": "s1", "value": 0.4}` or `{"id": "s1", "class": "anger"}`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::suite::groups::{pitch_group_assign, PitchGroup};
use crate::types::{attr, AttrValue, DatasetManifest, GroupPartition, Label, PredictionSet, Sample, Task, UnitValue};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: {message}")]
    Validation {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate sample id \"{0}\"")]
    DuplicateId(String),
    #[error("manifest {0} contains no samples")]
    Empty(PathBuf),
    #[error("attribute `{0}` is absent from every sample")]
    AttributeAbsent(String),
}

/// Synonyms mapped onto the canonical category names at ingestion.
pub const CLASS_SYNONYMS: &[(&str, &str)] = &[
    ("joy", "happiness"),
    ("happy", "happiness"),
    ("angry", "anger"),
    ("sad", "sadness"),
    ("neu", "neutral"),
    ("ang", "anger"),
    ("hap", "happiness"),
    ("sad.", "sadness"),
    ("bored", "boredom"),
    ("disgusted", "disgust"),
    ("fearful", "fear"),
    ("surprised", "surprise"),
    ("frustrated", "frustration"),
];

/// The four classes the categorical models predict.
pub const CANONICAL_CLASSES: [&str; 4] = ["anger", "happiness", "neutral", "sadness"];

/// Every category name known to the harness.
pub const KNOWN_CLASSES: &[&str] = &[
    "anger",
    "happiness",
    "neutral",
    "sadness",
    "boredom",
    "calm",
    "contempt",
    "disgust",
    "excitement",
    "fear",
    "frustration",
    "other",
    "surprise",
];

pub fn canonical_class(name: &str) -> String {
    let lower = name.trim().to_lowercase();
    CLASS_SYNONYMS
        .iter()
        .find(|(from, _)| *from == lower)
        .map(|(_, to)| to.to_string())
        .unwrap_or(lower)
}

/// Ingestion options.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// When set, categories outside this set are rejected instead of flagged.
    pub classes: Option<BTreeSet<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dataset: String,
    #[serde(default)]
    sample_rate_hz: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSample {
    id: String,
    #[serde(default)]
    audio_path: Option<PathBuf>,
    #[serde(default)]
    speaker: Option<String>,
    #[serde(default)]
    gold: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    attrs: BTreeMap<String, AttrValue>,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, ManifestError> {
    load_manifest_with(path, &LoadOptions::default())
}

pub fn load_manifest_with(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<DatasetManifest, ManifestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let default_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_manifest(&text, path, &base, &default_name, opts)
}

/// Parse manifest text. Relative audio paths are resolved against `base`.
pub fn parse_manifest(
    text: &str,
    origin: &Path,
    base: &Path,
    default_name: &str,
    opts: &LoadOptions,
) -> Result<DatasetManifest, ManifestError> {
    let mut name = default_name.to_string();
    let mut sample_rate_hz = None;
    let mut samples = Vec::new();
    let mut seen = BTreeSet::new();
    let mut unknown_classes = BTreeSet::new();
    let parse_err = |line: usize, message: String| ManifestError::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let invalid = |line: usize, message: String| ManifestError::Validation {
        path: origin.to_path_buf(),
        line,
        message,
    };

    let mut first = true;
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| parse_err(line_no, e.to_string()))?;
        if first && value.get("dataset").is_some() {
            first = false;
            let header: Header =
                serde_json::from_value(value).map_err(|e| parse_err(line_no, e.to_string()))?;
            name = header.dataset;
            sample_rate_hz = header.sample_rate_hz;
            continue;
        }
        first = false;
        let raw: RawSample =
            serde_json::from_value(value).map_err(|e| parse_err(line_no, e.to_string()))?;
        if !seen.insert(raw.id.clone()) {
            return Err(ManifestError::DuplicateId(raw.id));
        }
        let mut gold = BTreeMap::new();
        for (task_name, v) in raw.gold {
            let task: Task = task_name
                .parse()
                .map_err(|e: crate::types::TypeError| invalid(line_no, e.to_string()))?;
            let label = match (&v, task.is_dimensional()) {
                (serde_json::Value::Number(n), true) => {
                    let x = n.as_f64().unwrap_or(f64::NAN);
                    Label::Value(UnitValue::new(x).map_err(|_| {
                        invalid(line_no, format!("value out of range [0, 1] for {task}: {x}"))
                    })?)
                }
                (serde_json::Value::String(c), false) => {
                    let class = canonical_class(c);
                    if let Some(allowed) = &opts.classes {
                        if !allowed.contains(&class) {
                            return Err(invalid(line_no, format!("unknown class \"{class}\"")));
                        }
                    } else if !KNOWN_CLASSES.contains(&class.as_str()) {
                        unknown_classes.insert(class.clone());
                    }
                    Label::Class(class)
                }
                _ => {
                    return Err(invalid(
                        line_no,
                        format!("gold label {v} does not fit task {task}"),
                    ))
                }
            };
            gold.insert(task, label);
        }
        if let Some(f0) = raw.attrs.get(attr::MEAN_F0_HZ) {
            match f0.as_number() {
                Some(x) if x > 0.0 => {}
                _ => {
                    return Err(invalid(
                        line_no,
                        format!("{} must be a positive number", attr::MEAN_F0_HZ),
                    ))
                }
            }
        }
        let audio_path = raw.audio_path.map(|p| if p.is_relative() { base.join(p) } else { p });
        samples.push(Sample {
            id: raw.id,
            audio_path,
            speaker: raw.speaker,
            gold,
            attrs: raw.attrs,
        });
    }
    if samples.is_empty() {
        return Err(ManifestError::Empty(origin.to_path_buf()));
    }
    for class in &unknown_classes {
        log::warn!("{name}: unknown class \"{class}\" kept verbatim");
    }
    Ok(DatasetManifest {
        name,
        samples,
        sample_rate_hz,
        unknown_classes,
    })
}

/// Serialize a manifest in the line format read by [`load_manifest`].
pub fn write_manifest(manifest: &DatasetManifest, mut out: impl Write) -> std::io::Result<()> {
    #[derive(Serialize)]
    struct HeaderOut<'a> {
        dataset: &'a str,
        #[serde(skip_serializing_if = "Option::is_none")]
        sample_rate_hz: Option<u32>,
    }
    let header = HeaderOut {
        dataset: &manifest.name,
        sample_rate_hz: manifest.sample_rate_hz,
    };
    writeln!(out, "{}", serde_json::to_string(&header)?)?;
    for s in &manifest.samples {
        writeln!(out, "{}", serde_json::to_string(s)?)?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrediction {
    id: String,
    #[serde(default)]
    value: Option<f64>,
    #[serde(default)]
    class: Option<String>,
}

pub fn load_predictions(path: impl AsRef<Path>, task: Task) -> Result<PredictionSet, ManifestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let model_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_predictions(&text, path, &model_id, task)
}

pub fn parse_predictions(text: &str, origin: &Path, model_id: &str, task: Task) -> Result<PredictionSet, ManifestError> {
    let mut set = PredictionSet::new(model_id, task);
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        let raw: RawPrediction = serde_json::from_str(line).map_err(|e| ManifestError::Parse {
            path: origin.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        let label = parse_prediction_label(raw.value, raw.class, task).map_err(|message| {
            ManifestError::Validation {
                path: origin.to_path_buf(),
                line: line_no,
                message,
            }
        })?;
        if set.predictions.insert(raw.id.clone(), label).is_some() {
            return Err(ManifestError::DuplicateId(raw.id));
        }
    }
    if set.is_empty() {
        log::warn!("{}: no predictions", origin.display());
    }
    Ok(set)
}

pub(crate) fn parse_prediction_label(value: Option<f64>, class: Option<String>, task: Task) -> Result<Label, String> {
    match (value, class, task.is_dimensional()) {
        (Some(v), None, true) => Label::value(v).map_err(|e| e.to_string()),
        (None, Some(c), false) => Ok(Label::Class(canonical_class(&c))),
        (None, Some(c), true) => Err(format!("task mismatch: class \"{c}\" given for dimensional task {task}")),
        (Some(v), None, false) => Err(format!("task mismatch: value {v} given for task {task}")),
        (Some(_), Some(_), _) => Err("record has both value and class".into()),
        (None, None, _) => Err("record has neither value nor class".into()),
    }
}

pub fn write_predictions(set: &PredictionSet, mut out: impl Write) -> std::io::Result<()> {
    for (id, label) in &set.predictions {
        let line = match label {
            Label::Value(v) => serde_json::json!({"id": id, "value": v.get()}),
            Label::Class(c) => serde_json::json!({"id": id, "class": c}),
        };
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Group samples by an attribute value.
///
/// `mean_f0_hz` is special-cased: samples are assigned to pitch groups
/// from their speaker's average F0 (see [`partition_by_pitch`]).
pub fn partition_by_attribute(manifest: &DatasetManifest, attribute: &str) -> Result<GroupPartition, ManifestError> {
    if attribute == attr::MEAN_F0_HZ {
        return partition_by_pitch(manifest, 1);
    }
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut excluded = Vec::new();
    for s in &manifest.samples {
        match s.attr(attribute) {
            Some(v) => groups.entry(v.group_key()).or_default().push(s.id.clone()),
            None => excluded.push(s.id.clone()),
        }
    }
    if groups.is_empty() {
        return Err(ManifestError::AttributeAbsent(attribute.to_string()));
    }
    Ok(GroupPartition {
        attribute: attribute.to_string(),
        groups,
        excluded,
    })
}

/// Pitch groups from per-speaker average F0.
///
/// Segments with F0 outside 50..=350 Hz are excluded before averaging; speakers
/// with fewer than `min_speaker_samples` remaining segments are excluded. Samples
/// without a speaker are treated as their own speaker.
pub fn partition_by_pitch(manifest: &DatasetManifest, min_speaker_samples: usize) -> Result<GroupPartition, ManifestError> {
    let mut per_speaker: BTreeMap<String, Vec<(&str, f64)>> = BTreeMap::new();
    let mut excluded = Vec::new();
    let mut any = false;
    for s in &manifest.samples {
        let f0 = s.attr(attr::MEAN_F0_HZ).and_then(AttrValue::as_number);
        match f0 {
            Some(f) => {
                any = true;
                if PitchGroup::valid_f0(f) {
                    let spk = s.speaker.clone().unwrap_or_else(|| s.id.clone());
                    per_speaker.entry(spk).or_default().push((&s.id, f));
                } else {
                    excluded.push(s.id.clone());
                }
            }
            None => excluded.push(s.id.clone()),
        }
    }
    if !any {
        return Err(ManifestError::AttributeAbsent(attr::MEAN_F0_HZ.to_string()));
    }
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (_, items) in per_speaker {
        if items.len() < min_speaker_samples {
            excluded.extend(items.iter().map(|(id, _)| id.to_string()));
            continue;
        }
        let mean = items.iter().map(|(_, f)| f).sum::<f64>() / items.len() as f64;
        match pitch_group_assign(mean) {
            Some(group) => groups
                .entry(group.as_str().to_string())
                .or_default()
                .extend(items.iter().map(|(id, _)| id.to_string())),
            None => excluded.extend(items.iter().map(|(id, _)| id.to_string())),
        }
    }
    // keep manifest order inside each group
    let order: BTreeMap<&str, usize> = manifest
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    for ids in groups.values_mut() {
        ids.sort_by_key(|id| order[id.as_str()]);
    }
    excluded.sort_by_key(|id| order[id.as_str()]);
    Ok(GroupPartition {
        attribute: attr::MEAN_F0_HZ.to_string(),
        groups,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn parse(text: &str) -> Result<DatasetManifest, ManifestError> {
        parse_manifest(text, Path::new("m.jsonl"), Path::new("/data"), "m", &LoadOptions::default())
    }

    #[test]
    fn three_samples() {
        let m = parse(
            r#"{"id":"s1","gold":{"valence":0.2}}
{"id":"s2","gold":{"valence":0.5}}
{"id":"s3","gold":{"valence":0.9}}"#,
        )
        .unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.name, "m");
    }

    #[test]
    fn duplicate_id_is_named() {
        let err = parse("{\"id\":\"s1\"}\n{\"id\":\"s1\"}").unwrap_err();
        assert!(err.to_string().contains("\"s1\""), "{err}");
    }

    #[test]
    fn out_of_range_gold() {
        let err = parse(r#"{"id":"s1","gold":{"valence":1.3}}"#).unwrap_err();
        assert!(err.to_string().contains("value out of range"), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse("{\"id\":\"s1\"}\n{not json").unwrap_err();
        match err {
            ManifestError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn joy_becomes_happiness_and_unknown_is_flagged() {
        let m = parse(
            r#"{"id":"a","gold":{"categories":"Joy"}}
{"id":"b","gold":{"categories":"awe"}}"#,
        )
        .unwrap();
        assert_eq!(m.samples[0].gold[&Task::Categories], Label::class("happiness"));
        assert_eq!(m.samples[1].gold[&Task::Categories], Label::class("awe"));
        assert!(m.unknown_classes.contains("awe"));

        let strict = LoadOptions {
            classes: Some(CANONICAL_CLASSES.iter().map(|s| s.to_string()).collect()),
        };
        let err = parse_manifest(
            r#"{"id":"b","gold":{"categories":"awe"}}"#,
            Path::new("m"),
            Path::new("."),
            "m",
            &strict,
        )
        .unwrap_err();
        assert!(err.to_string().contains("unknown class"));
    }

    #[test]
    fn header_and_relative_paths() {
        let m = parse(
            r#"{"dataset":"emodb","sample_rate_hz":16000}
{"id":"a","audio_path":"wav/a.wav"}"#,
        )
        .unwrap();
        assert_eq!(m.name, "emodb");
        assert_eq!(m.sample_rate_hz, Some(16000));
        assert_eq!(m.samples[0].audio_path.as_deref(), Some(Path::new("/data/wav/a.wav")));
    }

    #[test]
    fn nonpositive_f0_rejected() {
        assert!(parse(r#"{"id":"a","attrs":{"mean_f0_hz":0}}"#).is_err());
    }

    #[test]
    fn predictions_for_valence() {
        let p = parse_predictions(
            "{\"id\":\"s1\",\"value\":0.4}\n{\"id\":\"s2\",\"value\":0.6}\n",
            Path::new("p"),
            "m",
            Task::Valence,
        )
        .unwrap();
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn class_for_valence_is_task_mismatch() {
        let err = parse_predictions("{\"id\":\"s1\",\"class\":\"anger\"}", Path::new("p"), "m", Task::Valence)
            .unwrap_err();
        assert!(err.to_string().contains("task mismatch"), "{err}");
    }

    #[test]
    fn empty_prediction_file_is_empty_set() {
        let p = parse_predictions("", Path::new("p"), "m", Task::Arousal).unwrap();
        assert!(p.is_empty());
    }

    fn sexed(n_f: usize, n_m: usize) -> DatasetManifest {
        let mut samples = Vec::new();
        for i in 0..n_f + n_m {
            let mut s = Sample::new(format!("s{i}"));
            let sex = if i < n_f { "f" } else { "m" };
            s.attrs.insert("sex".into(), AttrValue::Text(sex.into()));
            samples.push(s);
        }
        DatasetManifest {
            name: "d".into(),
            samples,
            sample_rate_hz: None,
            unknown_classes: Default::default(),
        }
    }

    #[test]
    fn partition_by_sex() {
        let m = sexed(6, 4);
        let p = partition_by_attribute(&m, "sex").unwrap();
        assert_eq!(p.groups["f"].len(), 6);
        assert_eq!(p.groups["m"].len(), 4);
        assert_eq!(p.total(), 10);
        assert!(partition_by_attribute(&m, "language").is_err());
    }

    #[test]
    fn partition_by_pitch_uses_speaker_average() {
        let mut m = sexed(0, 0);
        for (i, (spk, f0)) in [("a", 120.0), ("a", 160.0), ("b", 170.0), ("c", 240.0), ("c", 400.0)]
            .into_iter()
            .enumerate()
        {
            let mut s = Sample::new(format!("s{i}"));
            s.speaker = Some(spk.into());
            s.attrs.insert(attr::MEAN_F0_HZ.into(), AttrValue::Number(f0));
            m.samples.push(s);
        }
        let p = partition_by_attribute(&m, attr::MEAN_F0_HZ).unwrap();
        // speaker a averages 140 Hz -> low; c's 400 Hz segment is dropped
        assert_eq!(p.groups["low"], vec!["s0", "s1"]);
        assert_eq!(p.groups["medium"], vec!["s2"]);
        assert_eq!(p.groups["high"], vec!["s3"]);
        assert_eq!(p.excluded, vec!["s4"]);
    }

    #[test]
    fn manifest_round_trip() {
        let text = r#"{"dataset":"x","sample_rate_hz":8000}
{"id":"a","audio_path":"/abs/a.wav","speaker":"p","gold":{"arousal":0.5,"categories":"sadness"},"attrs":{"sex":"f","mean_f0_hz":150.5}}
{"id":"b"}"#;
        let m = parse(text).unwrap();
        let mut buf = Vec::new();
        write_manifest(&m, &mut buf).unwrap();
        let again = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(m, again);
    }
}
