use std::process::Command;

use serde::{Deserialize, Serialize};

use super::filters::{butterworth_filter, FilterKind};
use super::noise::{synthesize_noise, NoiseKind};
use super::{db_to_amplitude, mix_at_snr, resample_linear, wav, AudioBuffer, PerturbError, Placement, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompressorParams {
    pub threshold_dbfs: f64,
    pub ratio: f64,
    pub attack_ms: f64,
    pub release_ms: f64,
    /// Time constant of the RMS level detector.
    pub detector_ms: f64,
}

impl Default for CompressorParams {
    fn default() -> Self {
        Self {
            threshold_dbfs: -20.0,
            ratio: 4.0,
            attack_ms: 5.0,
            release_ms: 50.0,
            detector_ms: 10.0,
        }
    }
}

fn smoothing(ms: f64, rate_hz: u32) -> f64 {
    if ms <= 0.0 {
        0.0
    } else {
        (-1.0 / (ms * 1e-3 * rate_hz as f64)).exp()
    }
}

/// Feed-forward compressor on an RMS envelope, levels in dB relative to unit RMS.
pub fn compressor(signal: &AudioBuffer, params: CompressorParams) -> Result<AudioBuffer> {
    if !(params.ratio >= 1.0) {
        return Err(super::invalid("ratio", "must be at least 1"));
    }
    let det = smoothing(params.detector_ms, signal.rate_hz);
    let att = smoothing(params.attack_ms, signal.rate_hz);
    let rel = smoothing(params.release_ms, signal.rate_hz);
    let slope = 1.0 - 1.0 / params.ratio;
    let mut power = 0.0;
    let mut gain_db = 0.0;
    let out = signal
        .samples
        .iter()
        .map(|&x| {
            power = det * power + (1.0 - det) * x * x;
            let level = 10.0 * power.max(1e-20).log10();
            let target = if level > params.threshold_dbfs {
                -(level - params.threshold_dbfs) * slope
            } else {
                0.0
            };
            let c = if target < gain_db { att } else { rel };
            gain_db = c * gain_db + (1.0 - c) * target;
            if gain_db == 0.0 {
                x
            } else {
                x * db_to_amplitude(gain_db)
            }
        })
        .collect();
    Ok(signal.with_samples(out))
}

/// Codec stage of the phone chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Codec {
    /// Narrowband simulation: 8 kHz resampling with a 300-3400 Hz band limit.
    #[default]
    Builtin,
    /// Command template; `{input}` and `{output}` are replaced by wav paths.
    External(String),
}

const NARROWBAND_RATE: u32 = 8000;
const BAND_LOW_HZ: f64 = 300.0;
const BAND_HIGH_HZ: f64 = 3400.0;
const ANTI_ALIAS_ORDER: usize = 8;
const BAND_ORDER: usize = 4;
pub const PHONE_NOISE_SNR_DB: f64 = 30.0;
pub const PHONE_NOISE_HIGHPASS_HZ: f64 = 3000.0;

fn builtin_codec(signal: &AudioBuffer) -> Result<AudioBuffer> {
    let rate = signal.rate_hz;
    let mut x = signal.clone();
    if rate > NARROWBAND_RATE {
        butterworth_filter(&mut x, FilterKind::Lowpass, ANTI_ALIAS_ORDER, BAND_HIGH_HZ)?;
        x = resample_linear(&x, NARROWBAND_RATE)?;
    }
    butterworth_filter(&mut x, FilterKind::Highpass, BAND_ORDER, BAND_LOW_HZ)?;
    if BAND_HIGH_HZ < x.rate_hz as f64 / 2.0 {
        butterworth_filter(&mut x, FilterKind::Lowpass, BAND_ORDER, BAND_HIGH_HZ)?;
    }
    if rate > NARROWBAND_RATE {
        let mut y = resample_linear(&x, rate)?;
        y.samples.resize(signal.len(), 0.0);
        butterworth_filter(&mut y, FilterKind::Lowpass, ANTI_ALIAS_ORDER, BAND_HIGH_HZ)?;
        x = y;
    }
    Ok(x)
}

fn external_codec(signal: &AudioBuffer, template: &str) -> Result<AudioBuffer> {
    let fail = |message: String| PerturbError::Codec {
        command: template.to_string(),
        message,
    };
    let dir = tempfile::tempdir()?;
    let input = dir.path().join("in.wav");
    let output = dir.path().join("out.wav");
    wav::write_wav(&input, signal, wav::SampleFormat::Float32)?;
    let args: Vec<String> = template
        .split_whitespace()
        .map(|a| {
            a.replace("{input}", &input.to_string_lossy())
                .replace("{output}", &output.to_string_lossy())
        })
        .collect();
    let (program, rest) = args.split_first().ok_or_else(|| fail("empty command".into()))?;
    let result = Command::new(program).args(rest).output().map_err(|e| fail(e.to_string()))?;
    if !result.status.success() {
        return Err(fail(format!(
            "exit status {}: {}",
            result.status,
            String::from_utf8_lossy(&result.stderr).trim()
        )));
    }
    let mut out = wav::read_wav(&output)?;
    if out.rate_hz != signal.rate_hz {
        out = resample_linear(&out, signal.rate_hz)?;
    }
    out.samples.resize(signal.len(), 0.0);
    Ok(out)
}

/// Compressor, codec stage, then pink noise high-passed at 3 kHz added at 30 dB SNR.
pub fn phone_degradation(signal: &AudioBuffer, codec: &Codec, seed: u64) -> Result<AudioBuffer> {
    let compressed = compressor(signal, CompressorParams::default())?;
    let coded = match codec {
        Codec::Builtin => builtin_codec(&compressed)?,
        Codec::External(t) => external_codec(&compressed, t)?,
    };
    if coded.rms() == 0.0 || coded.is_empty() {
        return Ok(coded);
    }
    let mut noise = synthesize_noise(NoiseKind::Pink, coded.len(), coded.rate_hz, seed)?;
    if PHONE_NOISE_HIGHPASS_HZ < coded.rate_hz as f64 / 2.0 {
        butterworth_filter(&mut noise, FilterKind::Highpass, 2, PHONE_NOISE_HIGHPASS_HZ)?;
    }
    mix_at_snr(&coded, &noise, PHONE_NOISE_SNR_DB, Placement::Full, seed)
}
