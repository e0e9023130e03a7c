//! Audio perturbations used by the robustness tests.

mod dynamics;
mod filters;
mod noise;
mod spec;
pub mod wav;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use dynamics::{compressor, phone_degradation, Codec, CompressorParams};
pub use filters::{convolve_ir, first_order_filter, spectral_tilt, Biquad, FilterKind};
pub use noise::{babble, synthesize_noise, NoiseKind};
pub use spec::{apply, audio_set_paths, Choice, Operation, PerturbContext, PerturbationSpec, Placement, KINDS};

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("invalid audio: {0}")]
    InvalidAudio(String),
    #[error("signal is silent, SNR is undefined")]
    SilentSignal,
    #[error("noise buffer is empty or silent")]
    EmptyNoise,
    #[error("cannot remove {n} samples from a signal of length {len}")]
    CropTooLong { n: usize, len: usize },
    #[error("invalid parameter `{name}`: {message}")]
    InvalidParam { name: String, message: String },
    #[error("sample rates differ: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),
    #[error("pool `{name}` needs at least {need} buffers, has {have}")]
    PoolTooSmall { name: String, need: usize, have: usize },
    #[error("unknown audio reference `{0}`")]
    UnknownReference(String),
    #[error("unknown perturbation kind `{0}` (valid kinds: {valid})", valid = KINDS.join(", "))]
    UnknownKind(String),
    #[error("codec command `{command}` failed: {message}")]
    Codec { command: String, message: String },
    #[error("wav {path}: {message}")]
    Wav { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PerturbError>;

pub(crate) fn invalid(name: &str, message: impl Into<String>) -> PerturbError {
    PerturbError::InvalidParam {
        name: name.to_string(),
        message: message.into(),
    }
}

/// Mono audio at a fixed sample rate, nominal full scale `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, rate_hz: u32) -> Result<Self> {
        if rate_hz == 0 {
            return Err(PerturbError::InvalidAudio("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(PerturbError::InvalidAudio(format!("non-finite sample at {i}")));
        }
        Ok(Self { samples, rate_hz })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.rate_hz as f64
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            rate_hz: self.rate_hz,
        }
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

pub fn amplitude_to_db(a: f64) -> f64 {
    20.0 * a.log10()
}

/// Multiply every sample by `10^(gain_db/20)`. No clipping is applied.
pub fn apply_gain_db(signal: &AudioBuffer, gain_db: f64) -> AudioBuffer {
    if gain_db == 0.0 {
        return signal.clone();
    }
    let g = db_to_amplitude(gain_db);
    signal.with_samples(signal.samples.iter().map(|x| x * g).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditMode {
    AppendZeros,
    PrependZeros,
    CropStart,
    CropEnd,
}

pub fn edit_signal(signal: &AudioBuffer, mode: EditMode, n: usize) -> Result<AudioBuffer> {
    let len = signal.len();
    let s = &signal.samples;
    let out = match mode {
        EditMode::AppendZeros => {
            let mut v = s.clone();
            v.resize(len + n, 0.0);
            v
        }
        EditMode::PrependZeros => {
            let mut v = vec![0.0; n];
            v.extend_from_slice(s);
            v
        }
        EditMode::CropStart | EditMode::CropEnd if n >= len => {
            return Err(PerturbError::CropTooLong { n, len });
        }
        EditMode::CropStart => s[n..].to_vec(),
        EditMode::CropEnd => s[..len - n].to_vec(),
    };
    Ok(signal.with_samples(out))
}

/// Hard-clip at the `(1-p)` quantile of absolute sample values.
pub fn clip_fraction(signal: &AudioBuffer, p: f64) -> Result<AudioBuffer> {
    if !(0.0..1.0).contains(&p) {
        return Err(invalid("fraction", format!("must be in [0, 1), got {p}")));
    }
    if p == 0.0 || signal.is_empty() {
        return Ok(signal.clone());
    }
    let mut mags: Vec<f64> = signal.samples.iter().map(|x| x.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let pos = (1.0 - p) * (mags.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = mags[lo] + (mags[hi] - mags[lo]) * (pos - lo as f64);
    Ok(signal.with_samples(signal.samples.iter().map(|x| x.clamp(-t, t)).collect()))
}

/// Linear interpolation to a new rate; output length is `round(len * target / source)`.
pub fn resample_linear(signal: &AudioBuffer, target_rate_hz: u32) -> Result<AudioBuffer> {
    if target_rate_hz == 0 {
        return Err(invalid("target_rate_hz", "must be positive"));
    }
    if target_rate_hz == signal.rate_hz {
        return Ok(signal.clone());
    }
    let s = &signal.samples;
    let ratio = signal.rate_hz as f64 / target_rate_hz as f64;
    let out_len = (s.len() as f64 / ratio).round() as usize;
    let out = (0..out_len)
        .map(|i| {
            let t = i as f64 * ratio;
            let j = t.floor() as usize;
            if j + 1 >= s.len() {
                return *s.last().unwrap_or(&0.0);
            }
            let a = s[j];
            let b = s[j + 1];
            if a == b {
                a
            } else {
                a + (b - a) * (t - j as f64)
            }
        })
        .collect();
    Ok(AudioBuffer {
        samples: out,
        rate_hz: target_rate_hz,
    })
}

fn fit_length(noise: &[f64], len: usize) -> Vec<f64> {
    noise.iter().copied().cycle().take(len).collect()
}

/// Add `noise` so that `rms(signal) / rms(scaled noise) = 10^(snr_db/20)`.
///
/// The noise RMS is taken over the part that is actually placed; the signal
/// RMS over the whole signal.
pub fn mix_at_snr(
    signal: &AudioBuffer,
    noise: &AudioBuffer,
    snr_db: f64,
    placement: Placement,
    seed: u64,
) -> Result<AudioBuffer> {
    let noise = if noise.rate_hz != signal.rate_hz {
        resample_linear(noise, signal.rate_hz)?
    } else {
        noise.clone()
    };
    if noise.is_empty() {
        return Err(PerturbError::EmptyNoise);
    }
    let rs = signal.rms();
    if !(rs > 0.0) {
        return Err(PerturbError::SilentSignal);
    }
    if !snr_db.is_finite() {
        return Err(invalid("snr_db", "must be finite"));
    }
    let len = signal.len();
    let (start, placed) = match placement {
        Placement::Full => (0, fit_length(&noise.samples, len)),
        Placement::RandomOffset => {
            let n = noise.len().min(len);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start = rng.random_range(0..=len - n);
            (start, noise.samples[..n].to_vec())
        }
    };
    let rn = rms(&placed);
    if !(rn > 0.0) {
        return Err(PerturbError::EmptyNoise);
    }
    let gain = rs / (rn * db_to_amplitude(snr_db));
    let mut out = signal.samples.clone();
    for (o, n) in out[start..].iter_mut().zip(&placed) {
        *o += gain * n;
    }
    Ok(signal.with_samples(out))
}

pub(crate) fn rng_for(seed: u64, key: &str) -> ChaCha8Rng {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(key.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    ChaCha8Rng::seed_from_u64(seed ^ u64::from_le_bytes(b))
}
