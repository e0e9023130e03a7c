use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{invalid, AudioBuffer, PerturbError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Lowpass,
    Highpass,
}

/// `y[n] = b0 x[n] + b1 x[n-1] - a1 y[n-1]`
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct FirstOrder {
    b0: f64,
    b1: f64,
    a1: f64,
}

impl FirstOrder {
    /// Bilinear transform of `(1 + s/zero) / (1 + s/pole)` in the prewarped
    /// frequency variable `tan(w/2)`.
    fn shelf(zero: f64, pole: f64) -> Self {
        let k = pole / zero;
        let d = 1.0 + pole;
        Self {
            b0: k * (1.0 + zero) / d,
            b1: k * (zero - 1.0) / d,
            a1: (pole - 1.0) / d,
        }
    }

    fn butterworth(kind: FilterKind, cutoff_hz: f64, rate_hz: f64) -> Self {
        let k = (PI * cutoff_hz / rate_hz).tan();
        let a1 = (k - 1.0) / (k + 1.0);
        match kind {
            FilterKind::Lowpass => Self {
                b0: k / (1.0 + k),
                b1: k / (1.0 + k),
                a1,
            },
            FilterKind::Highpass => Self {
                b0: 1.0 / (1.0 + k),
                b1: -1.0 / (1.0 + k),
                a1,
            },
        }
    }

    fn magnitude(&self, w: f64) -> f64 {
        let z = Complex::from_polar(1.0, -w);
        ((self.b0 + self.b1 * z) / (1.0 + self.a1 * z)).norm()
    }

    fn scale(&mut self, g: f64) {
        self.b0 *= g;
        self.b1 *= g;
    }

    pub(crate) fn process(&self, x: &mut [f64]) {
        let (mut x1, mut y1) = (0.0, 0.0);
        for v in x.iter_mut() {
            let y = self.b0 * *v + self.b1 * x1 - self.a1 * y1;
            x1 = *v;
            y1 = y;
            *v = y;
        }
    }
}

/// Second-order section, transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    pub fn lowpass(cutoff_hz: f64, q: f64, rate_hz: f64) -> Self {
        let k = (PI * cutoff_hz / rate_hz).tan();
        let norm = 1.0 / (1.0 + k / q + k * k);
        let b0 = k * k * norm;
        Self {
            b0,
            b1: 2.0 * b0,
            b2: b0,
            a1: 2.0 * (k * k - 1.0) * norm,
            a2: (1.0 - k / q + k * k) * norm,
        }
    }

    pub fn highpass(cutoff_hz: f64, q: f64, rate_hz: f64) -> Self {
        let k = (PI * cutoff_hz / rate_hz).tan();
        let norm = 1.0 / (1.0 + k / q + k * k);
        Self {
            b0: norm,
            b1: -2.0 * norm,
            b2: norm,
            a1: 2.0 * (k * k - 1.0) * norm,
            a2: (1.0 - k / q + k * k) * norm,
        }
    }

    /// Cascade realizing an even-order Butterworth filter.
    pub fn butterworth(kind: FilterKind, order: usize, cutoff_hz: f64, rate_hz: f64) -> Vec<Biquad> {
        (0..order / 2)
            .map(|k| {
                let q = 1.0 / (2.0 * ((2 * k + 1) as f64 * PI / (2 * order) as f64).sin());
                match kind {
                    FilterKind::Lowpass => Biquad::lowpass(cutoff_hz, q, rate_hz),
                    FilterKind::Highpass => Biquad::highpass(cutoff_hz, q, rate_hz),
                }
            })
            .collect()
    }

    pub fn process(&self, x: &mut [f64]) {
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b0 * input + s1;
            s1 = self.b1 * input - self.a1 * y + s2;
            s2 = self.b2 * input - self.a2 * y;
            *v = y;
        }
    }
}

pub(crate) fn run_cascade(sections: &[Biquad], x: &mut [f64]) {
    for s in sections {
        s.process(x);
    }
}

fn check_cutoff(cutoff_hz: f64, rate_hz: u32) -> Result<()> {
    if !(cutoff_hz > 0.0 && cutoff_hz < rate_hz as f64 / 2.0) {
        return Err(invalid(
            "cutoff_hz",
            format!("must lie strictly between 0 and {} Hz, got {cutoff_hz}", rate_hz as f64 / 2.0),
        ));
    }
    Ok(())
}

/// First-order Butterworth lowpass or highpass via the bilinear transform.
pub fn first_order_filter(signal: &AudioBuffer, kind: FilterKind, cutoff_hz: f64) -> Result<AudioBuffer> {
    check_cutoff(cutoff_hz, signal.rate_hz)?;
    let f = FirstOrder::butterworth(kind, cutoff_hz, signal.rate_hz as f64);
    let mut out = signal.samples.clone();
    f.process(&mut out);
    Ok(signal.with_samples(out))
}

pub(crate) fn butterworth_filter(signal: &mut AudioBuffer, kind: FilterKind, order: usize, cutoff_hz: f64) -> Result<()> {
    check_cutoff(cutoff_hz, signal.rate_hz)?;
    run_cascade(
        &Biquad::butterworth(kind, order, cutoff_hz, signal.rate_hz as f64),
        &mut signal.samples,
    );
    Ok(())
}

const TILT_PIVOT_HZ: f64 = 1000.0;
const TILT_LOWEST_HZ: f64 = 12.5;

/// First-order shelf sections approximating a constant slope in dB per octave,
/// one section per octave, unit gain at the 1 kHz pivot.
pub(crate) fn tilt_sections(slope_db_per_octave: f64, rate_hz: f64) -> Vec<FirstOrder> {
    if slope_db_per_octave == 0.0 {
        return Vec::new();
    }
    let ratio = 2f64.powf(slope_db_per_octave.abs() / (20.0 * 2f64.log10()));
    let nyquist = rate_hz / 2.0;
    let mut f = TILT_PIVOT_HZ;
    while f / 2.0 >= TILT_LOWEST_HZ {
        f /= 2.0;
    }
    let mut sections = Vec::new();
    while f < nyquist * 0.999 {
        let w = (PI * f / rate_hz).tan();
        sections.push(if slope_db_per_octave > 0.0 {
            FirstOrder::shelf(w, w * ratio)
        } else {
            FirstOrder::shelf(w * ratio, w)
        });
        f *= 2.0;
    }
    let w_pivot = 2.0 * PI * TILT_PIVOT_HZ.min(nyquist * 0.5) / rate_hz;
    for s in sections.iter_mut() {
        let m = s.magnitude(w_pivot);
        s.scale(1.0 / m);
    }
    sections
}

/// Tilt the spectrum by a constant slope and restore the input level.
///
/// The output RMS equals the input RMS unless that would push the peak above
/// full scale, in which case the output is peak-normalized to 1.
pub fn spectral_tilt(signal: &AudioBuffer, slope_db_per_octave: f64) -> Result<AudioBuffer> {
    if !slope_db_per_octave.is_finite() || slope_db_per_octave.abs() > 12.0 {
        return Err(invalid("slope_db_per_octave", "must be finite and within ±12"));
    }
    if slope_db_per_octave == 0.0 {
        return Ok(signal.clone());
    }
    let mut out = signal.samples.clone();
    for s in tilt_sections(slope_db_per_octave, signal.rate_hz as f64) {
        s.process(&mut out);
    }
    let rms_in = signal.rms();
    let rms_out = super::rms(&out);
    if rms_in > 0.0 && rms_out > 0.0 {
        let g = rms_in / rms_out;
        let peak = out.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let g = if peak * g > 1.0 { 1.0 / peak } else { g };
        out.iter_mut().for_each(|x| *x *= g);
    }
    Ok(signal.with_samples(out))
}

const DIRECT_CONVOLUTION_MAX_TAPS: usize = 64;

/// Linear convolution truncated to the input length, then RMS-normalized to the input.
pub fn convolve_ir(signal: &AudioBuffer, ir: &AudioBuffer) -> Result<AudioBuffer> {
    if ir.rate_hz != signal.rate_hz {
        return Err(PerturbError::RateMismatch(signal.rate_hz, ir.rate_hz));
    }
    if ir.is_empty() || ir.rms() == 0.0 {
        return Err(invalid("impulse_response", "empty or silent"));
    }
    let n = signal.len();
    let mut out = if ir.len() <= DIRECT_CONVOLUTION_MAX_TAPS {
        direct_convolution(&signal.samples, &ir.samples)
    } else {
        fft_convolution(&signal.samples, &ir.samples)
    };
    out.truncate(n);
    let rms_in = signal.rms();
    let rms_out = super::rms(&out);
    if rms_out > 0.0 {
        let g = rms_in / rms_out;
        out.iter_mut().for_each(|x| *x *= g);
    }
    Ok(signal.with_samples(out))
}

fn direct_convolution(x: &[f64], h: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            h.iter()
                .enumerate()
                .take(i + 1)
                .map(|(k, hk)| hk * x[i - k])
                .sum()
        })
        .collect()
}

fn fft_convolution(x: &[f64], h: &[f64]) -> Vec<f64> {
    let len = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let pad = |v: &[f64]| {
        let mut c: Vec<Complex<f64>> = v.iter().map(|r| Complex::new(*r, 0.0)).collect();
        c.resize(len, Complex::new(0.0, 0.0));
        c
    };
    let mut a = pad(x);
    let mut b = pad(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    a.iter().take(x.len()).map(|c| c.re / len as f64).collect()
}
