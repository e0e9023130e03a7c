//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use emotest::adapters::{AdapterSource, ModelAdapter, ProcessConfig};
use emotest::fairness_sim::{simulate_grid, FairnessMetric, RandomModel, ThresholdTable, DEFAULT_REPEATS};
use emotest::manifest::load_manifest;
use emotest::perturb::{self, audio_set_paths, wav, PerturbContext, PerturbationSpec};
use emotest::report::{compare, render_diff, render_report, Environment, Format, RunReport};
use emotest::suite::{
    builtin_table, calibration_table, load_registry, run_suite, EvalContext, IrEntry, DEFAULT_BALANCE_TARGET,
};
use emotest::Task;

fn split_binding(s: &str) -> Result<(String, PathBuf)> {
    let (role, path) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("expected ROLE=PATH, got `{s}`"))?;
    if role.is_empty() || path.is_empty() {
        bail!("expected ROLE=PATH, got `{s}`");
    }
    Ok((role.to_string(), PathBuf::from(path)))
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Dataset bindings ROLE=MANIFEST (repeatable or comma-separated).
    #[arg(long, required = true, value_delimiter = ',')]
    pub manifests: Vec<String>,
    /// Directory of prediction files `<dataset>.<task>.jsonl`.
    #[arg(long, conflicts_with = "command", required_unless_present = "command")]
    pub predictions: Option<PathBuf>,
    /// Model command speaking the subprocess protocol; `{task}` is substituted.
    #[arg(long)]
    pub command: Option<String>,
    #[arg(long)]
    pub model_id: Option<String>,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    /// Per-batch timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// Concurrent model invocations.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Test registry (JSONL); defaults to the built-in one.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Threshold table (TSV) or `builtin`; fairness thresholds then follow the actual group sizes.
    #[arg(long)]
    pub thresholds: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub tasks: Option<Vec<Task>>,
    #[arg(long, default_value = "emotest-work")]
    pub workdir: PathBuf,
    /// Report directory; defaults to the work directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Exit with status 3 when the overall pass fraction is below this value.
    #[arg(long)]
    pub gate: Option<f64>,
    /// Audio pools for noise perturbations, ROLE=DIR|MANIFEST|FILE.
    #[arg(long, value_delimiter = ',')]
    pub pool: Vec<String>,
    /// Impulse-response sets NAME=DIR; `reference.wav` in DIR is the baseline.
    #[arg(long, value_delimiter = ',')]
    pub ir_set: Vec<String>,
    /// External codec command for the phone perturbation, with {input} and {output}.
    #[arg(long)]
    pub codec: Option<String>,
    #[arg(long)]
    pub no_cache: bool,
    /// Samples per group after balancing.
    #[arg(long, default_value_t = DEFAULT_BALANCE_TARGET)]
    pub balance_target: usize,
    /// Monte Carlo repeats for thresholds missing from the table.
    #[arg(long, default_value_t = DEFAULT_REPEATS)]
    pub repeats: usize,
}

pub struct RunOutcome {
    pub report: RunReport,
    pub structured: PathBuf,
    pub human: PathBuf,
    pub gate_failed: bool,
}

fn load_ir_set(dir: &Path) -> Result<Vec<IrEntry>> {
    let mut entries = Vec::new();
    for p in audio_set_paths(dir)? {
        let id = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        entries.push(IrEntry {
            reference: id == "reference",
            id,
            path: p,
        });
    }
    if !entries.iter().any(|e| e.reference) {
        bail!("impulse-response set {} has no reference.wav", dir.display());
    }
    Ok(entries)
}

pub fn cmd_run(args: &RunArgs) -> Result<RunOutcome> {
    let mut manifests = BTreeMap::new();
    for b in &args.manifests {
        let (role, path) = split_binding(b)?;
        if !path.exists() {
            bail!("manifest not found: {}", path.display());
        }
        let m = load_manifest(&path).with_context(|| format!("loading manifest {}", path.display()))?;
        log::info!("bound {role} to {} ({} samples)", path.display(), m.len());
        manifests.insert(role, m);
    }
    let registry = load_registry(args.registry.as_deref())?;
    let tasks: Vec<Task> = match &args.tasks {
        Some(t) => {
            let mut t = t.clone();
            t.sort();
            t.dedup();
            t
        }
        None => Task::ALL.to_vec(),
    };
    let selected = registry.filter_tasks(&tasks);

    let mut pctx = PerturbContext {
        codec: args.codec.clone(),
        ..Default::default()
    };
    for b in &args.pool {
        let (role, path) = split_binding(b)?;
        pctx.bind(&role, &path)
            .with_context(|| format!("loading pool {role} from {}", path.display()))?;
    }
    let mut ctx = EvalContext::new(manifests.clone());
    for b in &args.ir_set {
        let (name, dir) = split_binding(b)?;
        ctx.ir_sets.insert(name, load_ir_set(&dir)?);
    }
    ctx.seed = args.seed;
    ctx.balance_target = args.balance_target;
    ctx.simulation_repeats = args.repeats;
    let table_hash = match args.thresholds.as_deref() {
        None => None,
        Some(spec) => {
            let table = if spec == "builtin" {
                builtin_table()
            } else {
                let f = fs::File::open(spec).with_context(|| format!("opening threshold table {spec}"))?;
                ThresholdTable::read(f).with_context(|| format!("reading threshold table {spec}"))?
            };
            let h = table.hash();
            ctx.thresholds = Some(Mutex::new(table));
            Some(h)
        }
    };

    let adapter = match (&args.predictions, &args.command) {
        (Some(dir), _) => ModelAdapter::PredictionFiles {
            model_id: args.model_id.clone().unwrap_or_else(|| dir.display().to_string()),
            dir: dir.clone(),
        },
        (None, Some(cmd)) => {
            let mut config = ProcessConfig::new(cmd.clone(), tasks.iter().copied());
            config.batch_size = args.batch_size;
            config.timeout = args.timeout.map(Duration::from_secs_f64);
            config.parallelism = args.jobs;
            ModelAdapter::Subprocess {
                model_id: args.model_id.clone().unwrap_or_else(|| cmd.clone()),
                config,
            }
        }
        (None, None) => bail!("one of --predictions or --command is required"),
    };
    fs::create_dir_all(&args.workdir).with_context(|| format!("creating {}", args.workdir.display()))?;
    let source = AdapterSource::new(adapter, manifests, pctx, &args.workdir, !args.no_cache);

    log::info!("running {} tests", selected.specs.len());
    let results = run_suite(&selected.specs, &ctx, &source);
    if let Some(t) = ctx.threshold_table() {
        let path = args.workdir.join("thresholds.resolved.tsv");
        fs::write(&path, t.to_bytes()).with_context(|| format!("writing {}", path.display()))?;
    }

    let env = Environment {
        seed: args.seed,
        registry_hash: registry.hash.clone(),
        threshold_table_hash: table_hash,
        datasets: ctx.manifests.keys().cloned().collect(),
    };
    let report = RunReport::new(source.adapter.model_id(), env, tasks, results);
    let out = args.out.clone().unwrap_or_else(|| args.workdir.clone());
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let structured = out.join("report.json");
    let human = out.join("report.md");
    fs::write(&structured, render_report(&report, Format::Structured)?)
        .with_context(|| format!("writing {}", structured.display()))?;
    fs::write(&human, render_report(&report, Format::Human)?).with_context(|| format!("writing {}", human.display()))?;
    let gate_failed = match args.gate {
        Some(g) => report.aggregate.overall.is_none_or(|o| o < g),
        None => false,
    };
    Ok(RunOutcome {
        report,
        structured,
        human,
        gate_failed,
    })
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Metrics to simulate (comma-separated).
    #[arg(long, value_delimiter = ',', required_unless_present = "from_registry")]
    pub metric: Vec<FairnessMetric>,
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 3, 4, 6, 10])]
    pub groups: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [60usize, 100, 300, 600, 1000, 2000])]
    pub samples: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_REPEATS)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Threshold table output (TSV).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional grid output: groups x samples-per-group -> simulated value.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Random prediction model; defaults to the metric's standard model.
    #[arg(long)]
    pub model: Option<RandomModel>,
    /// Random truth model for truth-dependent metrics.
    #[arg(long)]
    pub truth: Option<RandomModel>,
    /// Simulate every calibrated fairness row of the registry instead of a grid.
    #[arg(long)]
    pub from_registry: bool,
    #[arg(long)]
    pub registry: Option<PathBuf>,
}

pub const UNSTABLE_REPEATS: usize = 100;

pub fn cmd_simulate(args: &SimulateArgs) -> Result<ThresholdTable> {
    if args.repeats < UNSTABLE_REPEATS {
        log::warn!(
            "{} repeats give an unstable maximum; use {} or more for thresholds",
            args.repeats,
            UNSTABLE_REPEATS
        );
    }
    let table = if args.from_registry {
        let reg = load_registry(args.registry.as_deref())?;
        calibration_table(&reg, args.repeats, args.seed)?
    } else {
        let mut table = ThresholdTable::default();
        for &m in &args.metric {
            let model = args.model.clone().unwrap_or_else(|| m.default_model());
            let truth = m.needs_truth().then(|| {
                args.truth.clone().unwrap_or_else(|| {
                    if m.is_categorical() {
                        RandomModel::uniform(4)
                    } else {
                        RandomModel::gaussian()
                    }
                })
            });
            let t = simulate_grid(m, &args.groups, &args.samples, &model, truth.as_ref(), args.repeats, args.seed)?;
            table.entries.extend(t.entries);
        }
        table
    };
    write_atomic(&args.out, &table.to_bytes())?;
    if let Some(grid) = &args.grid {
        let mut s = String::from("metric\tn_groups\tsamples_per_group\tmodel\ttruth\tmax_diff\n");
        for e in &table.entries {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                e.metric,
                e.n_groups,
                e.samples_per_group,
                e.model,
                e.truth.as_deref().unwrap_or(""),
                e.simulated
            ));
        }
        write_atomic(grid, s.as_bytes())?;
    }
    Ok(table)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    /// Perturbation kind, e.g. white_noise or spectral_tilt.
    #[arg(long)]
    pub kind: String,
    /// Parameters as a JSON object.
    #[arg(long, default_value = "{}")]
    pub params: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Input WAV file, directory or JSONL manifest.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub pool: Vec<String>,
    #[arg(long)]
    pub codec: Option<String>,
}

/// Returns the number of files written and the spec fingerprint.
pub fn cmd_perturb(args: &PerturbArgs) -> Result<(usize, String)> {
    let params: serde_json::Value = serde_json::from_str(&args.params).context("--params must be a JSON object")?;
    let spec = PerturbationSpec::from_kind(&args.kind, params, args.seed)?;
    let mut ctx = PerturbContext {
        codec: args.codec.clone(),
        ..Default::default()
    };
    for b in &args.pool {
        let (role, path) = split_binding(b)?;
        ctx.bind(&role, &path)?;
    }
    ctx.preload(&spec)?;
    let inputs = audio_set_paths(&args.input)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for p in &inputs {
        let name = p.file_name().ok_or_else(|| anyhow!("bad input path {}", p.display()))?;
        let id = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let audio = wav::read_wav(p)?;
        let out = perturb::apply(&spec, &audio, &id, &ctx)?;
        wav::write_wav(&args.out.join(name), &out, wav::SampleFormat::Float32)?;
    }
    Ok((inputs.len(), spec.fingerprint()))
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub a: PathBuf,
    pub b: PathBuf,
}

pub fn cmd_compare(args: &CompareArgs) -> Result<String> {
    let read = |p: &Path| -> Result<RunReport> {
        let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        RunReport::parse(&bytes).with_context(|| format!("parsing {}", p.display()))
    };
    let (a, b) = (read(&args.a)?, read(&args.b)?);
    let d = compare(&a, &b)?;
    Ok(render_diff(&a, &b, &d))
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}
