//! PCM wave file I/O. Multichannel input is downmixed by averaging.

use std::path::Path;

use hound::{SampleFormat as HoundFormat, WavReader, WavSpec, WavWriter};

use super::{AudioBuffer, PerturbError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Int16,
    Float32,
}

fn wav_err(path: &Path, e: impl ToString) -> PerturbError {
    PerturbError::Wav {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let reader = WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        HoundFormat::Float => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        HoundFormat::Int => {
            let scale = 2f64.powi(spec.bits_per_sample as i32 - 1);
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_err(path, e))?
        }
    };
    let samples = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    AudioBuffer::new(samples, spec.sample_rate)
}

pub fn write_wav(path: &Path, audio: &AudioBuffer, format: SampleFormat) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: audio.rate_hz,
        bits_per_sample: match format {
            SampleFormat::Int16 => 16,
            SampleFormat::Float32 => 32,
        },
        sample_format: match format {
            SampleFormat::Int16 => HoundFormat::Int,
            SampleFormat::Float32 => HoundFormat::Float,
        },
    };
    let mut w = WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in &audio.samples {
        match format {
            SampleFormat::Int16 => {
                let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                w.write_sample(v)
            }
            SampleFormat::Float32 => w.write_sample(s as f32),
        }
        .map_err(|e| wav_err(path, e))?;
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

/// The buffer as it reads back from a 32-bit float file.
pub fn quantize_f32(audio: &AudioBuffer) -> AudioBuffer {
    AudioBuffer {
        samples: audio.samples.iter().map(|&s| s as f32 as f64).collect(),
        rate_hz: audio.rate_hz,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let a = AudioBuffer::new(vec![0.0, 0.5, -0.25, 0.999], 22050).unwrap();
        let p = dir.path().join("f.wav");
        write_wav(&p, &a, SampleFormat::Float32).unwrap();
        assert_eq!(read_wav(&p).unwrap(), quantize_f32(&a));
        let q = dir.path().join("i.wav");
        write_wav(&q, &a, SampleFormat::Int16).unwrap();
        let b = read_wav(&q).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert!((x - y).abs() < 1.0 / 32768.0);
        }
    }

    #[test]
    fn stereo_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: HoundFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for v in [16384i16, 0, -16384, -16384] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        assert_eq!(read_wav(&p).unwrap().samples, vec![0.25, -0.5]);
    }

    #[test]
    fn missing_file_names_path() {
        let e = read_wav(Path::new("/nonexistent/x.wav")).unwrap_err();
        assert!(e.to_string().contains("/nonexistent/x.wav"));
    }
}
