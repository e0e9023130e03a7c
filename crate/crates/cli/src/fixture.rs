//! Synthetic mini-dataset used by self-tests and the golden run.
//!
//! Each clip is a carrier tone whose frequency encodes the emotion class and
//! whose level encodes valence, amplitude-modulated at the speaker's pitch.
//! The model double decodes both back, with deliberate errors baked in.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use emotest::perturb::wav::{write_wav, SampleFormat};
use emotest::perturb::AudioBuffer;
use emotest::{AttrValue, Label, Sample, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const RATE_HZ: u32 = 16_000;
pub const CLIP_SECONDS: f64 = 0.5;
pub const CLASSES: [&str; 4] = ["anger", "happiness", "neutral", "sadness"];
/// Carrier frequency per class, in `CLASSES` order.
pub const CARRIERS_HZ: [f64; 4] = [300.0, 600.0, 1200.0, 2400.0];
/// RMS of a unit-amplitude carrier under the 50% pitch modulation.
pub const MODULATED_RMS: f64 = 0.75;
pub const LEVEL_OFFSET: f64 = 0.05;
pub const LEVEL_SCALE: f64 = 0.4;

const SPEAKERS: [(&str, &str, f64); 3] = [("spk1", "female", 210.0), ("spk2", "male", 120.0), ("spk3", "female", 175.0)];
const SAMPLES_PER_SPEAKER: usize = 40;
const CLASS_VALENCE: [f64; 4] = [0.2, 0.8, 0.5, 0.25];
const CONFUSION_RATE: f64 = 0.2;

fn clip(carrier_hz: f64, f0_hz: f64, amplitude: f64, phase: f64) -> Vec<f64> {
    let n = (CLIP_SECONDS * RATE_HZ as f64) as usize;
    let tau = std::f64::consts::TAU;
    (0..n)
        .map(|i| {
            let t = i as f64 / RATE_HZ as f64;
            amplitude * (1.0 + 0.5 * (tau * f0_hz * t).sin()) * (tau * carrier_hz * t + phase).sin()
        })
        .collect()
}

fn write_clip(path: &Path, samples: Vec<f64>) -> Result<()> {
    let audio = AudioBuffer::new(samples, RATE_HZ)?;
    write_wav(path, &audio, SampleFormat::Int16).with_context(|| format!("writing {}", path.display()))
}

/// Write the mini-dataset under `out`: `manifest.jsonl`, `audio/`, noise pools
/// under `pools/<role>/` and an impulse-response set under `irs/`.
pub fn write_fixture(out: &Path, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, 0.08).expect("valid normal");
    for d in ["audio", "pools/speech", "pools/environment", "pools/music", "pools/cough", "irs"] {
        fs::create_dir_all(out.join(d)).with_context(|| format!("creating {}", out.join(d).display()))?;
    }

    let mut manifest = format!("{{\"dataset\": \"mini\", \"sample_rate_hz\": {RATE_HZ}}}\n");
    for (spk, sex, f0) in SPEAKERS {
        for i in 0..SAMPLES_PER_SPEAKER {
            let class = i % CLASSES.len();
            let valence = (CLASS_VALENCE[class] + rng.random_range(-0.1..0.1)).clamp(0.0, 1.0);
            let shown = if rng.random::<f64>() < CONFUSION_RATE {
                (class + rng.random_range(1..CLASSES.len())) % CLASSES.len()
            } else {
                class
            };
            let level = (valence + jitter.sample(&mut rng)).clamp(0.0, 1.0);
            let amplitude = LEVEL_OFFSET + LEVEL_SCALE * level;
            let id = format!("{spk}_{i:02}");
            let rel = format!("audio/{id}.wav");
            let f0_here = f0 + rng.random_range(-5.0..5.0);
            write_clip(&out.join(&rel), clip(CARRIERS_HZ[shown], f0_here, amplitude, rng.random_range(0.0..1.0)))?;

            let mut s = Sample::new(id);
            s.audio_path = Some(rel.into());
            s.speaker = Some(spk.to_string());
            s.gold.insert(Task::Valence, Label::value((valence * 1000.0).round() / 1000.0)?);
            s.gold.insert(Task::Categories, Label::class(CLASSES[class]));
            s.attrs.insert("sex".into(), AttrValue::Text(sex.into()));
            s.attrs
                .insert("mean_f0_hz".into(), AttrValue::Number((f0_here * 10.0).round() / 10.0));
            manifest.push_str(&serde_json::to_string(&s)?);
            manifest.push('\n');
        }
    }
    let mpath = out.join("manifest.jsonl");
    fs::File::create(&mpath)
        .and_then(|mut f| f.write_all(manifest.as_bytes()))
        .with_context(|| format!("writing {}", mpath.display()))?;

    let n = (CLIP_SECONDS * RATE_HZ as f64) as usize;
    for k in 0..8 {
        let f = 150.0 + 23.0 * k as f64;
        let talker: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / RATE_HZ as f64;
                let env = (std::f64::consts::TAU * 3.0 * t + k as f64).sin().abs();
                env * (1..5).map(|h| (std::f64::consts::TAU * f * h as f64 * t).sin() / h as f64).sum::<f64>()
            })
            .collect();
        write_clip(&out.join(format!("pools/speech/talker{k}.wav")), scale(talker))?;
    }
    for k in 0..2 {
        let hum: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        write_clip(&out.join(format!("pools/environment/env{k}.wav")), scale(hum))?;
        let chord: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / RATE_HZ as f64;
                [220.0, 277.2, 329.6].iter().map(|f| (std::f64::consts::TAU * f * (1.0 + k as f64) * t).sin()).sum()
            })
            .collect();
        write_clip(&out.join(format!("pools/music/music{k}.wav")), scale(chord))?;
        let burst: Vec<f64> = (0..n / 4)
            .map(|i| rng.random_range(-1.0..1.0) * (-(i as f64) / 400.0).exp())
            .collect();
        write_clip(&out.join(format!("pools/cough/cough{k}.wav")), scale(burst))?;
    }

    let mut dirac = vec![0.0; 64];
    dirac[0] = 0.9;
    write_clip(&out.join("irs/reference.wav"), dirac)?;
    for (name, decay) in [("room_a", 200.0), ("room_b", 800.0)] {
        let ir: Vec<f64> = (0..2048)
            .map(|i| rng.random_range(-1.0..1.0) * (-(i as f64) / decay).exp())
            .collect();
        write_clip(&out.join(format!("irs/{name}.wav")), scale(ir))?;
    }
    Ok(())
}

fn scale(mut x: Vec<f64>) -> Vec<f64> {
    let peak = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    x
}
