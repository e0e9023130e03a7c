use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::filters::tilt_sections;
use super::{invalid, AudioBuffer, PerturbError, Result};

/// Slope of pink noise: -10·log10(2) dB per octave.
const PINK_SLOPE_DB: f64 = -3.010_299_956_639_812;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Pink,
    Tone { freq_hz: f64 },
}

/// White noise is unit-variance Gaussian, pink noise is unit RMS and the tone
/// has unit amplitude.
pub fn synthesize_noise(kind: NoiseKind, length: usize, rate_hz: u32, seed: u64) -> Result<AudioBuffer> {
    if rate_hz == 0 {
        return Err(invalid("rate_hz", "must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = match kind {
        NoiseKind::White => white(length, &mut rng),
        NoiseKind::Pink => {
            let mut x = white(length, &mut rng);
            for s in tilt_sections(PINK_SLOPE_DB, rate_hz as f64) {
                s.process(&mut x);
            }
            let r = super::rms(&x);
            if r > 0.0 {
                x.iter_mut().for_each(|v| *v /= r);
            }
            x
        }
        NoiseKind::Tone { freq_hz } => {
            if !(freq_hz > 0.0 && freq_hz < rate_hz as f64 / 2.0) {
                return Err(invalid("freq_hz", format!("must lie in (0, {}) Hz", rate_hz / 2)));
            }
            (0..length)
                .map(|i| (2.0 * PI * freq_hz * i as f64 / rate_hz as f64).sin())
                .collect()
        }
    };
    AudioBuffer::new(samples, rate_hz)
}

fn white<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub const BABBLE_MIN: usize = 4;
pub const BABBLE_MAX: usize = 7;

/// Sum of 4 to 7 distinct speech buffers, looped or cut to `length`, at unit RMS.
pub fn babble(pool: &[AudioBuffer], length: usize, seed: u64) -> Result<AudioBuffer> {
    if pool.len() < BABBLE_MAX {
        return Err(PerturbError::PoolTooSmall {
            name: "speech".into(),
            need: BABBLE_MAX,
            have: pool.len(),
        });
    }
    let rate = pool[0].rate_hz;
    if let Some(b) = pool.iter().find(|b| b.rate_hz != rate) {
        return Err(PerturbError::RateMismatch(rate, b.rate_hz));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(BABBLE_MIN..=BABBLE_MAX);
    let mut out = vec![0.0; length];
    for i in sample(&mut rng, pool.len(), k).into_iter() {
        let src = &pool[i].samples;
        if src.is_empty() {
            continue;
        }
        for (o, s) in out.iter_mut().zip(src.iter().cycle()) {
            *o += s;
        }
    }
    let r = super::rms(&out);
    if !(r > 0.0) {
        return Err(PerturbError::EmptyNoise);
    }
    out.iter_mut().for_each(|v| *v /= r);
    AudioBuffer::new(out, rate)
}
