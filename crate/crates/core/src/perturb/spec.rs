use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dynamics::{compressor, phone_degradation, Codec, CompressorParams};
use super::filters::{convolve_ir, first_order_filter, spectral_tilt, FilterKind};
use super::noise::{babble, synthesize_noise, NoiseKind};
use super::{
    apply_gain_db, clip_fraction, edit_signal, invalid, mix_at_snr, resample_linear, rng_for, wav, AudioBuffer,
    EditMode, PerturbError, Result,
};

/// A parameter that is either fixed or drawn per file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Choice {
    Fixed(f64),
    OneOf(Vec<f64>),
    Range { min: f64, max: f64 },
}

impl Choice {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match self {
            Choice::Fixed(v) => v.is_finite(),
            Choice::OneOf(vs) => !vs.is_empty() && vs.iter().all(|v| v.is_finite()),
            Choice::Range { min, max } => min.is_finite() && max.is_finite() && min <= max,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(name, "needs a finite value, a non-empty list or a range with min <= max"))
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            Choice::Fixed(v) => *v,
            Choice::OneOf(vs) => vs[rng.random_range(0..vs.len())],
            Choice::Range { min, max } if min == max => *min,
            Choice::Range { min, max } => rng.random_range(*min..*max),
        }
    }

    /// Ranges draw uniformly among the integers they contain.
    fn draw_count<R: Rng>(&self, name: &str, rng: &mut R) -> Result<usize> {
        let v = match self {
            Choice::Range { min, max } if min.ceil() <= max.floor() && *min >= 0.0 => {
                rng.random_range(min.ceil() as u64..=max.floor() as u64) as f64
            }
            _ => self.draw(rng),
        };
        if v < 0.0 || v.fract() != 0.0 {
            return Err(invalid(name, format!("must be a non-negative integer, got {v}")));
        }
        Ok(v as usize)
    }
}

impl From<f64> for Choice {
    fn from(v: f64) -> Self {
        Choice::Fixed(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Noise looped or cut to the signal length.
    #[default]
    Full,
    /// A single event at a uniformly drawn position.
    RandomOffset,
}

/// Operation and parameters of a perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Operation {
    Gain {
        gain_db: Choice,
    },
    WhiteNoise {
        snr_db: Choice,
    },
    Tone {
        freq_hz: Choice,
        snr_db: Choice,
    },
    Edit {
        mode: EditMode,
        n: Choice,
    },
    Clip {
        fraction: Choice,
    },
    Filter {
        filter: FilterKind,
        cutoff_hz: Choice,
    },
    SpectralTilt {
        slope_db_per_octave: Choice,
    },
    /// `pool` names an audio reference: `@role` or a path.
    Babble {
        pool: String,
        snr_db: Choice,
    },
    AddNoise {
        pool: String,
        snr_db: Choice,
        #[serde(default)]
        placement: Placement,
    },
    ImpulseResponse {
        ir: String,
    },
    Phone {
        #[serde(default)]
        codec: Option<String>,
    },
    Compressor(CompressorParams),
}

pub const KINDS: [&str; 12] = [
    "gain",
    "white_noise",
    "tone",
    "edit",
    "clip",
    "filter",
    "spectral_tilt",
    "babble",
    "add_noise",
    "impulse_response",
    "phone",
    "compressor",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    #[serde(flatten)]
    pub op: Operation,
    #[serde(default)]
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(op: Operation, seed: u64) -> Self {
        Self { op, seed }
    }

    pub fn identity() -> Self {
        Self::new(Operation::Gain { gain_db: Choice::Fixed(0.0) }, 0)
    }

    /// Build from a kind name and a JSON object of parameters.
    pub fn from_kind(kind: &str, params: serde_json::Value, seed: u64) -> Result<Self> {
        if !KINDS.contains(&kind) {
            return Err(PerturbError::UnknownKind(kind.to_string()));
        }
        let mut obj = match params {
            serde_json::Value::Object(m) => m,
            serde_json::Value::Null => Default::default(),
            _ => return Err(invalid("params", "must be a JSON object")),
        };
        obj.insert("kind".into(), kind.into());
        obj.insert("seed".into(), seed.into());
        let spec: Self = serde_json::from_value(serde_json::Value::Object(obj)).map_err(|e| invalid(kind, e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn kind(&self) -> &'static str {
        match &self.op {
            Operation::Gain { .. } => "gain",
            Operation::WhiteNoise { .. } => "white_noise",
            Operation::Tone { .. } => "tone",
            Operation::Edit { .. } => "edit",
            Operation::Clip { .. } => "clip",
            Operation::Filter { .. } => "filter",
            Operation::SpectralTilt { .. } => "spectral_tilt",
            Operation::Babble { .. } => "babble",
            Operation::AddNoise { .. } => "add_noise",
            Operation::ImpulseResponse { .. } => "impulse_response",
            Operation::Phone { .. } => "phone",
            Operation::Compressor(_) => "compressor",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.op {
            Operation::Gain { gain_db } => gain_db.validate("gain_db"),
            Operation::WhiteNoise { snr_db } => snr_db.validate("snr_db"),
            Operation::Tone { freq_hz, snr_db } => {
                freq_hz.validate("freq_hz")?;
                snr_db.validate("snr_db")
            }
            Operation::Edit { n, .. } => n.validate("n"),
            Operation::Clip { fraction } => fraction.validate("fraction"),
            Operation::Filter { cutoff_hz, .. } => cutoff_hz.validate("cutoff_hz"),
            Operation::SpectralTilt { slope_db_per_octave } => slope_db_per_octave.validate("slope_db_per_octave"),
            Operation::Babble { snr_db, .. } | Operation::AddNoise { snr_db, .. } => snr_db.validate("snr_db"),
            Operation::ImpulseResponse { .. } | Operation::Phone { .. } => Ok(()),
            Operation::Compressor(p) => {
                if p.ratio >= 1.0 && p.attack_ms >= 0.0 && p.release_ms >= 0.0 {
                    Ok(())
                } else {
                    Err(invalid("compressor", "ratio must be >= 1 and times non-negative"))
                }
            }
        }
    }

    /// Audio references (`@role` or paths) the spec needs.
    pub fn references(&self) -> Vec<&str> {
        match &self.op {
            Operation::Babble { pool, .. } | Operation::AddNoise { pool, .. } => vec![pool.as_str()],
            Operation::ImpulseResponse { ir } => vec![ir.as_str()],
            _ => Vec::new(),
        }
    }

    /// Hex SHA-256 of the canonical JSON encoding, seed included.
    pub fn fingerprint(&self) -> String {
        let value = serde_json::to_value(self).expect("spec serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }
}

/// Audio pools and codec bound at run time.
#[derive(Debug, Clone, Default)]
pub struct PerturbContext {
    pub pools: BTreeMap<String, Vec<AudioBuffer>>,
    /// Replaces the built-in codec of `phone` specs that name none.
    pub codec: Option<String>,
}

impl PerturbContext {
    /// Load a role from a wav file, a directory of wav files or a manifest.
    pub fn bind(&mut self, role: &str, path: &Path) -> Result<()> {
        let buffers = load_audio_set(path)?;
        self.pools.insert(role.trim_start_matches('@').to_string(), buffers);
        Ok(())
    }

    /// Load every path reference of `spec` that is not bound yet.
    pub fn preload(&mut self, spec: &PerturbationSpec) -> Result<()> {
        for r in spec.references() {
            if !r.starts_with('@') && !self.pools.contains_key(r) {
                let buffers = load_audio_set(Path::new(r))?;
                self.pools.insert(r.to_string(), buffers);
            }
        }
        Ok(())
    }

    pub fn resolve(&self, reference: &str) -> Result<&[AudioBuffer]> {
        self.pools
            .get(reference.trim_start_matches('@'))
            .map(Vec::as_slice)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| PerturbError::UnknownReference(reference.to_string()))
    }
}

/// Wav paths of a file, a directory (sorted) or a JSONL manifest.
pub fn audio_set_paths(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
            .collect();
        paths.sort();
        return Ok(paths);
    }
    if path.extension().is_some_and(|e| e == "jsonl") {
        let m = crate::manifest::load_manifest(path).map_err(|e| invalid("pool", e.to_string()))?;
        return Ok(m.samples.into_iter().filter_map(|s| s.audio_path).collect());
    }
    if !path.exists() {
        return Err(PerturbError::UnknownReference(path.display().to_string()));
    }
    Ok(vec![path.to_path_buf()])
}

fn load_audio_set(path: &Path) -> Result<Vec<AudioBuffer>> {
    audio_set_paths(path)?.iter().map(|p| wav::read_wav(p)).collect()
}

/// Apply `spec` to one file. Drawn parameters depend only on the seed and `sample_id`.
pub fn apply(spec: &PerturbationSpec, input: &AudioBuffer, sample_id: &str, ctx: &PerturbContext) -> Result<AudioBuffer> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, sample_id);
    let sub_seed: u64 = rng.random();
    match &spec.op {
        Operation::Gain { gain_db } => Ok(apply_gain_db(input, gain_db.draw(&mut rng))),
        Operation::WhiteNoise { snr_db } => {
            let snr = snr_db.draw(&mut rng);
            let noise = synthesize_noise(NoiseKind::White, input.len(), input.rate_hz, sub_seed)?;
            mix_at_snr(input, &noise, snr, Placement::Full, sub_seed)
        }
        Operation::Tone { freq_hz, snr_db } => {
            let f = freq_hz.draw(&mut rng);
            let snr = snr_db.draw(&mut rng);
            let tone = synthesize_noise(NoiseKind::Tone { freq_hz: f }, input.len(), input.rate_hz, sub_seed)?;
            mix_at_snr(input, &tone, snr, Placement::Full, sub_seed)
        }
        Operation::Edit { mode, n } => edit_signal(input, *mode, n.draw_count("n", &mut rng)?),
        Operation::Clip { fraction } => clip_fraction(input, fraction.draw(&mut rng)),
        Operation::Filter { filter, cutoff_hz } => first_order_filter(input, *filter, cutoff_hz.draw(&mut rng)),
        Operation::SpectralTilt { slope_db_per_octave } => spectral_tilt(input, slope_db_per_octave.draw(&mut rng)),
        Operation::Babble { pool, snr_db } => {
            let snr = snr_db.draw(&mut rng);
            let pool = ctx.resolve(pool)?;
            let noise = babble(pool, input.len(), sub_seed)?;
            mix_at_snr(input, &noise, snr, Placement::Full, sub_seed)
        }
        Operation::AddNoise { pool, snr_db, placement } => {
            let snr = snr_db.draw(&mut rng);
            let pool = ctx.resolve(pool)?;
            let noise = &pool[rng.random_range(0..pool.len())];
            mix_at_snr(input, noise, snr, *placement, sub_seed)
        }
        Operation::ImpulseResponse { ir } => {
            let set = ctx.resolve(ir)?;
            if set.len() != 1 {
                return Err(invalid("ir", format!("`{ir}` holds {} responses, expected one", set.len())));
            }
            let h = resample_linear(&set[0], input.rate_hz)?;
            convolve_ir(input, &h)
        }
        Operation::Phone { codec } => {
            let codec = match codec.as_ref().or(ctx.codec.as_ref()) {
                Some(c) => Codec::External(c.clone()),
                None => Codec::Builtin,
            };
            phone_degradation(input, &codec, sub_seed)
        }
        Operation::Compressor(p) => compressor(input, *p),
    }
}
