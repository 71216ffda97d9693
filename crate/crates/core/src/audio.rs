//! Waveform loading, downmixing and rate conversion.

use std::path::Path;

use crate::error::{Error, Result};

/// Canonical sample rate used by the built-in feature extractor.
pub const CANONICAL_RATE: u32 = 16_000;

/// Mono audio with amplitudes nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyAudio);
        }
        if sample_rate == 0 {
            return Err(Error::InvariantViolation("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvariantViolation(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Scale so the largest absolute sample is 1. Silent input is returned unchanged.
    pub fn peak_normalized(&self) -> Waveform {
        let peak = self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()));
        if peak == 0.0 {
            return self.clone();
        }
        let samples = self.samples.iter().map(|s| s / peak).collect();
        Waveform { samples, sample_rate: self.sample_rate }
    }
}

/// Read a RIFF/WAVE file holding 16-bit PCM or 32-bit IEEE float samples.
///
/// 16-bit samples are divided by 32768. Multi-channel audio is downmixed by
/// taking the arithmetic mean of the channels at each sample instant.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let reader = hound::WavReader::open(path).map_err(map_hound)?;
    read_wav(reader)
}

/// Same as [`load_wav`] but from any byte source.
pub fn read_wav_from<R: std::io::Read>(source: R) -> Result<Waveform> {
    let reader = hound::WavReader::new(source).map_err(map_hound)?;
    read_wav(reader)
}

fn read_wav<R: std::io::Read>(reader: hound::WavReader<R>) -> Result<Waveform> {
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::UnsupportedFormat("zero channels".into()));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(map_hound)?,
        (format, bits) => {
            return Err(Error::UnsupportedFormat(format!("{bits}-bit {format:?} samples")))
        }
    };
    if interleaved.len() < channels {
        return Err(Error::EmptyAudio);
    }
    let samples = if channels == 1 {
        interleaved
    } else {
        downmix(&interleaved, channels)
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Mean over channels of interleaved frames. A trailing partial frame is dropped.
pub fn downmix(interleaved: &[f32], channels: usize) -> Vec<f32> {
    interleaved
        .chunks_exact(channels)
        .map(|frame| {
            let sum: f64 = frame.iter().map(|&s| s as f64).sum();
            (sum / channels as f64) as f32
        })
        .collect()
}

fn map_hound(err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::Io(e),
        hound::Error::FormatError(msg) => Error::UnsupportedFormat(msg.to_string()),
        hound::Error::Unsupported => Error::UnsupportedFormat("unsupported WAVE encoding".into()),
        other => Error::UnsupportedFormat(other.to_string()),
    }
}

/// Write a mono waveform as 16-bit PCM, clipping to `[-1, 1]`.
pub fn write_wav_pcm16(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(map_hound)?;
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(map_hound)?;
    }
    writer.finalize().map_err(map_hound)?;
    Ok(())
}

/// Linear-interpolation resampling.
///
/// Output length is `round(len * target / source)` (at least one sample).
/// Positions past the last input sample hold its value. Equal rates return
/// the input unchanged.
pub fn resample_linear(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvariantViolation("target rate must be positive".into()));
    }
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }
    let n = w.samples.len();
    let ratio = w.sample_rate as f64 / target_rate as f64;
    let out_len = ((n as f64 * target_rate as f64 / w.sample_rate as f64).round() as usize).max(1);
    let last = w.samples[n - 1];
    let samples = (0..out_len)
        .map(|j| {
            let pos = j as f64 * ratio;
            let i0 = pos.floor() as usize;
            if i0 + 1 >= n {
                return last;
            }
            let frac = pos - i0 as f64;
            let a = w.samples[i0] as f64;
            let b = w.samples[i0 + 1] as f64;
            (a + (b - a) * frac) as f32
        })
        .collect();
    Waveform::new(samples, target_rate)
}
