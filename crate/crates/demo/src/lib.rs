//! WebAssembly bindings behind the static page in `www/`.
//!
//! Each operation has a plain Rust entry point returning JSON, wrapped by a
//! `#[wasm_bindgen]` export that hands the JSON text to the page.

use emotest::fairness_sim::{n_min_bin, simulate_threshold, FairnessMetric};
use emotest::metrics::{concordance_corr, jensen_shannon_distance, mean_absolute_error, pearson_corr, spearman_rho};
use emotest::perturb::{clip_fraction, first_order_filter, mix_at_snr, spectral_tilt, AudioBuffer, FilterKind, Placement};
use emotest::BinSpec;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Work cap for one browser-side simulation (repeats x groups x samples).
pub const MAX_SIMULATED_DRAWS: usize = 20_000_000;

const RATE_HZ: u32 = 16_000;
const PLOT_POINTS: usize = 400;

/// Numbers separated by commas or whitespace.
pub fn parse_values(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("`{t}` is not a number")))
        .collect()
}

pub fn metrics_report(truth: &str, pred: &str) -> Result<Value, String> {
    let t = parse_values(truth)?;
    let p = parse_values(pred)?;
    if t.len() != p.len() {
        return Err(format!("{} gold values but {} predictions", t.len(), p.len()));
    }
    if t.iter().chain(&p).any(|v| !(0.0..=1.0).contains(v)) {
        return Err("values must lie in [0, 1]".into());
    }
    let ccc = concordance_corr(&t, &p).map_err(|e| e.to_string())?;
    let bins = BinSpec::new(10).expect("10 bins");
    Ok(json!({
        "n": t.len(),
        "ccc": ccc,
        "pcc": pearson_corr(&t, &p).ok(),
        "spearman": spearman_rho(&t, &p).ok(),
        "mae": mean_absolute_error(&t, &p).map_err(|e| e.to_string())?,
        "js_distance": jensen_shannon_distance(&t, &p, bins).map_err(|e| e.to_string())?,
    }))
}

pub fn threshold_report(metric: &str, groups: usize, samples: usize, repeats: usize, seed: u64) -> Result<Value, String> {
    let metric: FairnessMetric = metric.parse().map_err(|e: emotest::fairness_sim::SimError| e.to_string())?;
    let work = repeats.saturating_mul(groups).saturating_mul(samples);
    if work > MAX_SIMULATED_DRAWS {
        return Err(format!("{work} draws requested, the demo allows {MAX_SIMULATED_DRAWS}"));
    }
    let model = metric.default_model();
    let truth = metric.needs_truth().then_some(&model);
    let threshold = simulate_threshold(metric, groups, samples, &model, truth, repeats, seed).map_err(|e| e.to_string())?;
    Ok(json!({
        "metric": metric.id(),
        "model": model.to_string(),
        "threshold": threshold,
        "n_min_bin": n_min_bin(samples),
    }))
}

/// A quarter second of a vowel-like harmonic signal at 150 Hz.
pub fn demo_signal() -> AudioBuffer {
    let n = RATE_HZ as usize / 4;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / RATE_HZ as f64;
            (1..=20)
                .map(|k| 0.3 / k as f64 * (2.0 * std::f64::consts::PI * 150.0 * k as f64 * t).sin())
                .sum::<f64>()
        })
        .collect();
    AudioBuffer::new(samples, RATE_HZ).expect("valid demo signal")
}

fn decimate(x: &[f64]) -> Vec<f64> {
    let step = x.len().div_ceil(PLOT_POINTS).max(1);
    x.iter().step_by(step).copied().collect()
}

/// Apply one perturbation to the demo signal.
///
/// `amount` is the SNR in dB (`white_noise`), the slope in dB per octave
/// (`spectral_tilt`), the cutoff in Hz (`lowpass`) or the clipped share (`clip`).
pub fn perturb_report(kind: &str, amount: f64, seed: u64) -> Result<Value, String> {
    let x = demo_signal();
    let y = match kind {
        "white_noise" => {
            let noise = emotest::perturb::synthesize_noise(emotest::perturb::NoiseKind::White, x.len(), RATE_HZ, seed)
                .map_err(|e| e.to_string())?;
            mix_at_snr(&x, &noise, amount, Placement::Full, seed)
        }
        "spectral_tilt" => spectral_tilt(&x, amount),
        "lowpass" => first_order_filter(&x, FilterKind::Lowpass, amount),
        "clip" => clip_fraction(&x, amount),
        other => return Err(format!("unknown demo perturbation `{other}`")),
    }
    .map_err(|e| e.to_string())?;
    let diff: Vec<f64> = y.samples.iter().zip(&x.samples).map(|(a, b)| a - b).collect();
    let change = emotest::perturb::rms(&diff);
    Ok(json!({
        "kind": kind,
        "rms_in": x.rms(),
        "rms_out": y.rms(),
        "peak_out": y.peak(),
        "snr_db": if change > 0.0 { Some(20.0 * (x.rms() / change).log10()) } else { None },
        "input": decimate(&x.samples),
        "output": decimate(&y.samples),
    }))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn metrics(truth: &str, pred: &str) -> Result<String, JsValue> {
    to_js(metrics_report(truth, pred))
}

#[wasm_bindgen]
pub fn threshold(metric: &str, groups: usize, samples: usize, repeats: usize, seed: u32) -> Result<String, JsValue> {
    to_js(threshold_report(metric, groups, samples, repeats, seed as u64))
}

#[wasm_bindgen]
pub fn perturb(kind: &str, amount: f64, seed: u32) -> Result<String, JsValue> {
    to_js(perturb_report(kind, amount, seed as u64))
}
