//! Deterministic scripted stand-in for a model under test.
//!
//! It decodes the fixture's encoding: zero-crossing rate gives the carrier
//! frequency and hence the class; RMS level gives valence.

use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{Context, Result};
use emotest::perturb::wav::read_wav;
use emotest::Task;

use crate::fixture::{CARRIERS_HZ, CLASSES, LEVEL_OFFSET, LEVEL_SCALE, MODULATED_RMS};

#[derive(Debug, Clone, PartialEq)]
pub enum Behaviour {
    Decode,
    Constant(f64),
    ConstantClass(String),
}

/// (dimension value, class) read off one clip.
pub fn decode(samples: &[f64], rate_hz: u32) -> (f64, &'static str) {
    let n = samples.len().max(1) as f64;
    let rms = (samples.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
    let value = ((rms / MODULATED_RMS - LEVEL_OFFSET) / LEVEL_SCALE).clamp(0.0, 1.0);
    let crossings = samples.windows(2).filter(|w| (w[0] < 0.0) != (w[1] < 0.0)).count() as f64;
    let freq = crossings / n * rate_hz as f64 / 2.0;
    let class = CARRIERS_HZ
        .iter()
        .enumerate()
        .min_by(|a, b| {
            let da = (freq.max(1.0) / a.1).log2().abs();
            let db = (freq.max(1.0) / b.1).log2().abs();
            da.total_cmp(&db)
        })
        .map(|(i, _)| CLASSES[i])
        .expect("non-empty class table");
    (value, class)
}

fn record(path: &str, task: Task, behaviour: &Behaviour) -> Result<String> {
    let line = match behaviour {
        Behaviour::Constant(v) => serde_json::json!({"id": path, "value": v}),
        Behaviour::ConstantClass(c) => serde_json::json!({"id": path, "class": c}),
        Behaviour::Decode => {
            let audio = read_wav(Path::new(path)).with_context(|| format!("reading {path}"))?;
            let (value, class) = decode(&audio.samples, audio.rate_hz);
            if task.is_dimensional() {
                serde_json::json!({"id": path, "value": (value * 1e6).round() / 1e6})
            } else {
                serde_json::json!({"id": path, "class": class})
            }
        }
    };
    Ok(line.to_string())
}

/// Answer the subprocess protocol: paths in, one JSON record per path out.
pub fn serve(input: impl BufRead, mut output: impl Write, task: Task, behaviour: &Behaviour) -> Result<()> {
    for line in input.lines() {
        let path = line?;
        if path.trim().is_empty() {
            continue;
        }
        writeln!(output, "{}", record(&path, task, behaviour)?)?;
    }
    output.flush()?;
    Ok(())
}
