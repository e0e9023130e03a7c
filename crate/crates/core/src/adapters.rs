//! Black-box model access: prediction files or a subprocess, plus caching.
//!
//! Subprocess protocol (see `docs/PROTOCOL.md`): the command gets one audio
//! path per line on stdin and writes one JSON record per line on stdout,
//! `{"id": <path as received>, "value": <0..1>}` or `{"id": ..., "class": <name>}`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use sha2::{Digest, Sha256};
use wait_timeout::ChildExt;

use crate::manifest::{canonical_class, load_predictions, write_predictions, ManifestError};
use crate::perturb::{self, wav, PerturbContext, PerturbError, PerturbationSpec};
use crate::suite::PredictionSource;
use crate::types::{DatasetManifest, Label, PredictionSet, Task};

/// Environment variable carrying the requested task to subprocess models.
pub const TASK_ENV: &str = "EMOTEST_TASK";

#[derive(Debug, thiserror::Error)]
pub enum AdapterError {
    #[error("cannot start `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("`{command}` exited with {status}: {stderr}")]
    Exit { command: String, status: String, stderr: String },
    #[error("`{command}` timed out after {seconds} s")]
    Timeout { command: String, seconds: f64 },
    #[error("`{command}` output line {line}: {message}")]
    Malformed { command: String, line: usize, message: String },
    #[error("no prediction for {} input(s): {}", missing.len(), missing.join(", "))]
    MissingIds { missing: Vec<String> },
    #[error("adapter does not answer task {0}")]
    TaskNotDeclared(Task),
    #[error("dataset `{dataset}` has no audio paths")]
    NoAudio { dataset: String },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, AdapterError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AdapterError + '_ {
    move |source| AdapterError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A model run as a local command.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessConfig {
    /// Command line; `{task}` is replaced by the task name. Split shell-style, run without a shell.
    pub command: String,
    pub tasks: BTreeSet<Task>,
    /// Paths per invocation.
    pub batch_size: usize,
    pub timeout: Option<Duration>,
    /// Batches run concurrently up to this bound.
    pub parallelism: usize,
}

impl ProcessConfig {
    pub fn new(command: impl Into<String>, tasks: impl IntoIterator<Item = Task>) -> Self {
        Self {
            command: command.into(),
            tasks: tasks.into_iter().collect(),
            batch_size: 256,
            timeout: None,
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelAdapter {
    /// Precomputed predictions: `<dir>/<dataset>.<task>.jsonl` for clean data and
    /// `<dir>/<dataset>.<task>.<fingerprint16>.jsonl` for perturbed data.
    PredictionFiles { model_id: String, dir: PathBuf },
    Subprocess { model_id: String, config: ProcessConfig },
}

impl ModelAdapter {
    pub fn model_id(&self) -> &str {
        match self {
            ModelAdapter::PredictionFiles { model_id, .. } | ModelAdapter::Subprocess { model_id, .. } => model_id,
        }
    }
}

/// File name for precomputed predictions.
pub fn prediction_file_name(dataset: &str, task: Task, fingerprint: Option<&str>) -> String {
    match fingerprint {
        None => format!("{dataset}.{task}.jsonl"),
        Some(fp) => format!("{dataset}.{task}.{}.jsonl", &fp[..fp.len().min(16)]),
    }
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    #[serde(default)]
    value: Option<f64>,
    #[serde(default)]
    class: Option<String>,
}

fn parse_record(line: &str, task: Task) -> std::result::Result<(String, Label), String> {
    let r: Record = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let label = match (r.value, r.class) {
        (Some(v), None) if task.is_dimensional() => Label::value(v).map_err(|e| e.to_string())?,
        (None, Some(c)) if !task.is_dimensional() => Label::class(canonical_class(&c)),
        _ => {
            return Err(format!(
                "expected exactly one of `{}` for task {task}",
                if task.is_dimensional() { "value" } else { "class" }
            ))
        }
    };
    Ok((r.id, label))
}

fn run_batch(config: &ProcessConfig, task: Task, paths: &[String]) -> Result<BTreeMap<String, Label>> {
    let line = config.command.replace("{task}", task.as_str());
    let argv = shlex::split(&line)
        .filter(|a| !a.is_empty())
        .ok_or_else(|| AdapterError::Config(format!("cannot parse command `{}`", config.command)))?;
    let mut child = Command::new(&argv[0])
        .args(&argv[1..])
        .env(TASK_ENV, task.as_str())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| AdapterError::Spawn {
            command: line.clone(),
            source,
        })?;

    let input: String = paths.iter().map(|p| format!("{p}\n")).collect();
    let mut stdin = child.stdin.take().expect("piped stdin");
    let mut stdout = child.stdout.take().expect("piped stdout");
    let mut stderr = child.stderr.take().expect("piped stderr");
    let writer = std::thread::spawn(move || {
        // a model that exits early closes the pipe; its exit status reports that
        let _ = stdin.write_all(input.as_bytes());
    });
    let out_reader = std::thread::spawn(move || {
        let mut s = Vec::new();
        let _ = stdout.read_to_end(&mut s);
        s
    });
    let err_reader = std::thread::spawn(move || {
        let mut s = Vec::new();
        let _ = stderr.read_to_end(&mut s);
        s
    });

    let status = match config.timeout {
        Some(t) => match child.wait_timeout(t).map_err(io_err(Path::new(&argv[0])))? {
            Some(s) => s,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(AdapterError::Timeout {
                    command: line,
                    seconds: t.as_secs_f64(),
                });
            }
        },
        None => child.wait().map_err(io_err(Path::new(&argv[0])))?,
    };
    let _ = writer.join();
    let out = out_reader.join().unwrap_or_default();
    let err = err_reader.join().unwrap_or_default();
    if !status.success() {
        return Err(AdapterError::Exit {
            command: line,
            status: status.to_string(),
            stderr: String::from_utf8_lossy(&err).trim().to_string(),
        });
    }

    let wanted: BTreeSet<&str> = paths.iter().map(String::as_str).collect();
    let mut got = BTreeMap::new();
    for (i, l) in BufReader::new(&out[..]).lines().enumerate() {
        let malformed = |message: String| AdapterError::Malformed {
            command: line.clone(),
            line: i + 1,
            message,
        };
        let l = l.map_err(|e| malformed(e.to_string()))?;
        if l.trim().is_empty() {
            continue;
        }
        let (id, label) = parse_record(&l, task).map_err(malformed)?;
        if !wanted.contains(id.as_str()) {
            return Err(malformed(format!("unknown id `{id}`")));
        }
        if got.insert(id.clone(), label).is_some() {
            return Err(malformed(format!("duplicate id `{id}`")));
        }
    }
    let missing: Vec<String> = paths.iter().filter(|p| !got.contains_key(*p)).cloned().collect();
    if !missing.is_empty() {
        return Err(AdapterError::MissingIds { missing });
    }
    Ok(got)
}

/// Run a subprocess model on audio files. Keys of the result are the paths as sent.
pub fn predict_paths(config: &ProcessConfig, paths: &[String], task: Task) -> Result<BTreeMap<String, Label>> {
    if !config.tasks.contains(&task) {
        return Err(AdapterError::TaskNotDeclared(task));
    }
    let batches: Vec<&[String]> = paths.chunks(config.batch_size.max(1)).collect();
    let mut out = BTreeMap::new();
    for wave in batches.chunks(config.parallelism.max(1)) {
        let results: Vec<Result<BTreeMap<String, Label>>> = std::thread::scope(|s| {
            let handles: Vec<_> = wave.iter().map(|b| s.spawn(|| run_batch(config, task, b))).collect();
            handles.into_iter().map(|h| h.join().expect("batch thread")).collect()
        });
        for r in results {
            out.extend(r?);
        }
    }
    Ok(out)
}

/// Predictions for every manifest sample with audio, keyed by sample id.
pub fn predict(
    config: &ProcessConfig,
    model_id: &str,
    manifest: &DatasetManifest,
    task: Task,
    audio: &BTreeMap<String, PathBuf>,
) -> Result<PredictionSet> {
    let ids: Vec<&String> = manifest.samples.iter().map(|s| &s.id).filter(|id| audio.contains_key(*id)).collect();
    if ids.is_empty() {
        return Err(AdapterError::NoAudio {
            dataset: manifest.name.clone(),
        });
    }
    let paths: Vec<String> = ids.iter().map(|id| audio[*id].display().to_string()).collect();
    let by_path = predict_paths(config, &paths, task)?;
    let mut set = PredictionSet::new(model_id, task);
    for (id, p) in ids.iter().zip(&paths) {
        set.insert((*id).clone(), by_path[p].clone());
    }
    Ok(set)
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

fn short_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    hex::encode(&h.finalize()[..8])
}

/// Write perturbed copies of every sample with audio into `dir`.
///
/// A `.complete` marker makes later calls reuse the files without touching them.
pub fn render_perturbed(
    manifest: &DatasetManifest,
    spec: &PerturbationSpec,
    ctx: &PerturbContext,
    dir: &Path,
    reuse: bool,
) -> Result<BTreeMap<String, PathBuf>> {
    let marker = dir.join(".complete");
    let targets: Vec<(String, PathBuf, PathBuf)> = manifest
        .samples
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let src = s.audio_path.clone()?;
            Some((s.id.clone(), src, dir.join(format!("{i:06}_{}.wav", sanitize(&s.id)))))
        })
        .collect();
    if targets.is_empty() {
        return Err(AdapterError::NoAudio {
            dataset: manifest.name.clone(),
        });
    }
    if !(reuse && marker.exists()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let render = |(id, src, dst): &(String, PathBuf, PathBuf)| -> Result<()> {
            let input = wav::read_wav(src)?;
            let out = perturb::apply(spec, &input, id, ctx)?;
            wav::write_wav(dst, &out, wav::SampleFormat::Float32)?;
            Ok(())
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            targets.par_iter().try_for_each(render)?;
        }
        #[cfg(not(feature = "parallel"))]
        targets.iter().try_for_each(render)?;
        fs::write(&marker, spec.fingerprint()).map_err(io_err(&marker))?;
    }
    Ok(targets.into_iter().map(|(id, _, dst)| (id, dst)).collect())
}

/// Prediction cache keyed by (model, dataset, fingerprint, task), in memory and under a work directory.
#[derive(Debug)]
pub struct PredictionCache {
    root: PathBuf,
    enabled: bool,
    memory: Mutex<BTreeMap<(String, String, String, Task), PredictionSet>>,
}

impl PredictionCache {
    pub fn new(root: impl Into<PathBuf>, enabled: bool) -> Self {
        Self {
            root: root.into(),
            enabled,
            memory: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn entry_dir(&self, model_id: &str, dataset: &str, fingerprint: &str) -> PathBuf {
        self.root
            .join(sanitize(model_id))
            .join(sanitize(dataset))
            .join(&fingerprint[..fingerprint.len().min(16)])
    }

    fn file(&self, model_id: &str, dataset: &str, fingerprint: &str, task: Task) -> PathBuf {
        self.entry_dir(model_id, dataset, fingerprint)
            .join(format!("predictions.{task}.jsonl"))
    }

    pub fn get(&self, model_id: &str, dataset: &str, fingerprint: &str, task: Task) -> Option<PredictionSet> {
        if !self.enabled {
            return None;
        }
        let key = (model_id.to_string(), dataset.to_string(), fingerprint.to_string(), task);
        if let Some(s) = self.memory.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Some(s.clone());
        }
        let path = self.file(model_id, dataset, fingerprint, task);
        let mut set = load_predictions(&path, task).ok()?;
        set.model_id = model_id.to_string();
        self.memory
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key, set.clone());
        Some(set)
    }

    pub fn put(&self, dataset: &str, fingerprint: &str, set: &PredictionSet) -> Result<()> {
        let path = self.file(&set.model_id, dataset, fingerprint, set.task);
        let dir = path.parent().expect("cache file has a parent");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut buf = Vec::new();
        write_predictions(set, &mut buf).map_err(io_err(&path))?;
        fs::write(&path, buf).map_err(io_err(&path))?;
        self.memory.lock().unwrap_or_else(|e| e.into_inner()).insert(
            (set.model_id.clone(), dataset.to_string(), fingerprint.to_string(), set.task),
            set.clone(),
        );
        Ok(())
    }
}

/// Fingerprint used for clean (unperturbed) data.
pub const CLEAN_FINGERPRINT: &str = "clean";

/// Cache key for a perturbation, including the context's codec choice.
pub fn perturbation_key(spec: &PerturbationSpec, ctx: &PerturbContext) -> String {
    short_hash(&[&spec.fingerprint(), ctx.codec.as_deref().unwrap_or("")])
}

/// `PredictionSource` backed by a model adapter.
pub struct AdapterSource {
    pub adapter: ModelAdapter,
    pub manifests: BTreeMap<String, DatasetManifest>,
    pub cache: PredictionCache,
    ctx: RwLock<PerturbContext>,
    locks: Mutex<BTreeMap<(String, String), Arc<Mutex<()>>>>,
}

impl AdapterSource {
    pub fn new(
        adapter: ModelAdapter,
        manifests: BTreeMap<String, DatasetManifest>,
        ctx: PerturbContext,
        workdir: &Path,
        use_cache: bool,
    ) -> Self {
        Self {
            adapter,
            manifests,
            cache: PredictionCache::new(workdir.join("cache"), use_cache),
            ctx: RwLock::new(ctx),
            locks: Mutex::new(BTreeMap::new()),
        }
    }

    /// Serializes work on one (dataset, perturbation) pair.
    fn key_lock(&self, dataset: &str, key: &str) -> Arc<Mutex<()>> {
        self.locks
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry((dataset.to_string(), key.to_string()))
            .or_default()
            .clone()
    }

    fn manifest(&self, dataset: &str) -> Result<&DatasetManifest> {
        self.manifests
            .get(dataset)
            .ok_or_else(|| AdapterError::Config(format!("dataset `{dataset}` is not bound")))
    }

    pub fn predict_clean(&self, dataset: &str, task: Task) -> Result<PredictionSet> {
        let model_id = self.adapter.model_id().to_string();
        match &self.adapter {
            ModelAdapter::PredictionFiles { dir, .. } => {
                let mut s = load_predictions(dir.join(prediction_file_name(dataset, task, None)), task)?;
                s.model_id = model_id;
                Ok(s)
            }
            ModelAdapter::Subprocess { config, .. } => {
                let lock = self.key_lock(dataset, CLEAN_FINGERPRINT);
                let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
                if let Some(s) = self.cache.get(&model_id, dataset, CLEAN_FINGERPRINT, task) {
                    return Ok(s);
                }
                let m = self.manifest(dataset)?;
                let audio: BTreeMap<String, PathBuf> = m
                    .samples
                    .iter()
                    .filter_map(|s| Some((s.id.clone(), s.audio_path.clone()?)))
                    .collect();
                let set = predict(config, &model_id, m, task, &audio)?;
                self.cache.put(dataset, CLEAN_FINGERPRINT, &set)?;
                Ok(set)
            }
        }
    }

    pub fn predict_perturbed(&self, dataset: &str, task: Task, spec: &PerturbationSpec) -> Result<PredictionSet> {
        let model_id = self.adapter.model_id().to_string();
        match &self.adapter {
            ModelAdapter::PredictionFiles { dir, .. } => {
                let name = prediction_file_name(dataset, task, Some(&spec.fingerprint()));
                let mut s = load_predictions(dir.join(name), task)?;
                s.model_id = model_id;
                Ok(s)
            }
            ModelAdapter::Subprocess { config, .. } => {
                let needs_load = {
                    let ctx = self.ctx.read().unwrap_or_else(|e| e.into_inner());
                    spec.references().iter().any(|r| ctx.resolve(r).is_err())
                };
                if needs_load {
                    self.ctx.write().unwrap_or_else(|e| e.into_inner()).preload(spec)?;
                }
                let ctx = self.ctx.read().unwrap_or_else(|e| e.into_inner());
                let key = perturbation_key(spec, &ctx);
                let lock = self.key_lock(dataset, &key);
                let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
                if let Some(s) = self.cache.get(&model_id, dataset, &key, task) {
                    return Ok(s);
                }
                let m = self.manifest(dataset)?;
                let dir = self.cache.entry_dir(&model_id, dataset, &key).join("audio");
                let audio = render_perturbed(m, spec, &ctx, &dir, self.cache.enabled)?;
                let set = predict(config, &model_id, m, task, &audio)?;
                self.cache.put(dataset, &key, &set)?;
                Ok(set)
            }
        }
    }
}

impl PredictionSource for AdapterSource {
    fn clean(&self, dataset: &str, task: Task) -> std::result::Result<PredictionSet, String> {
        self.predict_clean(dataset, task).map_err(|e| e.to_string())
    }

    fn perturbed(&self, dataset: &str, task: Task, spec: &PerturbationSpec) -> std::result::Result<PredictionSet, String> {
        self.predict_perturbed(dataset, task, spec).map_err(|e| e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str) -> ProcessConfig {
        ProcessConfig::new(format!("sh -c '{script}'"), [Task::Valence, Task::Categories])
    }

    fn paths(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("/x/{i}.wav")).collect()
    }

    const ECHO_HALF: &str = r#"while read p; do printf "{\"id\":\"%s\",\"value\":0.5}\n" "$p"; done"#;

    #[test]
    fn constant_double() {
        let out = predict_paths(&sh(ECHO_HALF), &paths(5), Task::Valence).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.values().all(|l| l.as_value() == Some(0.5)));
    }

    #[test]
    fn batching_and_parallelism_agree() {
        let mut c = sh(ECHO_HALF);
        c.batch_size = 2;
        c.parallelism = 3;
        let out = predict_paths(&c, &paths(7), Task::Valence).unwrap();
        assert_eq!(out.len(), 7);
    }

    #[test]
    fn exit_code_reports_stderr() {
        let err = predict_paths(&sh("echo boom >&2; exit 1"), &paths(1), Task::Valence).unwrap_err();
        match err {
            AdapterError::Exit { stderr, .. } => assert_eq!(stderr, "boom"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn missing_ids_are_named() {
        let script = r#"read a; read b; read c; for p in "$a" "$b"; do printf "{\"id\":\"%s\",\"value\":0.1}\n" "$p"; done"#;
        match predict_paths(&sh(script), &paths(3), Task::Valence).unwrap_err() {
            AdapterError::MissingIds { missing } => assert_eq!(missing, vec!["/x/2.wav".to_string()]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn malformed_line() {
        let err = predict_paths(&sh("cat >/dev/null; echo nope"), &paths(1), Task::Valence).unwrap_err();
        assert!(matches!(err, AdapterError::Malformed { line: 1, .. }), "{err}");
        let err = predict_paths(
            &sh(r#"read p; printf "{\"id\":\"%s\",\"class\":\"anger\"}\n" "$p""#),
            &paths(1),
            Task::Valence,
        )
        .unwrap_err();
        assert!(matches!(err, AdapterError::Malformed { .. }), "{err}");
    }

    #[test]
    fn timeout() {
        let mut c = sh("sleep 5");
        c.timeout = Some(Duration::from_millis(200));
        let err = predict_paths(&c, &paths(1), Task::Valence).unwrap_err();
        assert!(matches!(err, AdapterError::Timeout { .. }), "{err}");
    }

    #[test]
    fn task_env_and_declaration() {
        let script = r#"while read p; do printf "{\"id\":\"%s\",\"class\":\"%s\"}\n" "$p" "$EMOTEST_TASK"; done"#;
        let out = predict_paths(&sh(script), &paths(1), Task::Categories).unwrap();
        assert_eq!(out["/x/0.wav"].as_class(), Some("categories"));
        assert!(matches!(
            predict_paths(&sh(ECHO_HALF), &paths(1), Task::Arousal),
            Err(AdapterError::TaskNotDeclared(Task::Arousal))
        ));
    }

    #[test]
    fn file_names() {
        assert_eq!(prediction_file_name("emodb", Task::Valence, None), "emodb.valence.jsonl");
        assert_eq!(
            prediction_file_name("emodb", Task::Categories, Some("0123456789abcdef0123")),
            "emodb.categories.0123456789abcdef.jsonl"
        );
    }
}
