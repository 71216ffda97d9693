//! Continuous frame features: the built-in log-mel encoder and the `SLMF`
//! feature file used to import features computed elsewhere.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::Waveform;
use crate::binfmt::{check_version, Reader, Writer};
use crate::error::{Error, Result};

const FEATURE_MAGIC: &[u8; 4] = b"SLMF";
const FEATURE_VERSION: u32 = 1;

/// Frame hop assumed for feature files, which do not record it.
pub const DEFAULT_HOP_SECS: f64 = 0.020;

/// A `T x D` matrix of frame features stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: Vec<f32>,
    num_frames: usize,
    dim: usize,
    frame_hop: f64,
    source_tag: String,
}

impl FeatureSequence {
    pub fn new(
        frames: Vec<f32>,
        num_frames: usize,
        dim: usize,
        frame_hop: f64,
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        if num_frames == 0 || dim == 0 {
            return Err(Error::InvariantViolation(format!(
                "feature matrix must be non-empty, got {num_frames}x{dim}"
            )));
        }
        if frames.len() != num_frames * dim {
            return Err(Error::DimensionMismatch { expected: num_frames * dim, got: frames.len() });
        }
        if !(frame_hop > 0.0) {
            return Err(Error::InvariantViolation("frame hop must be positive".into()));
        }
        if let Some(i) = frames.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation(format!("feature value {i} is not finite")));
        }
        Ok(Self { frames, num_frames, dim, frame_hop, source_tag: source_tag.into() })
    }

    /// Build from a list of rows; every row must have the same length.
    pub fn from_rows(rows: &[Vec<f32>], frame_hop: f64, source_tag: impl Into<String>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut frames = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
            }
            frames.extend_from_slice(row);
        }
        Self::new(frames, rows.len(), dim, frame_hop, source_tag)
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame_hop(&self) -> f64 {
        self.frame_hop
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.frames[i * self.dim..(i + 1) * self.dim]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.frames.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.frames
    }

    pub fn with_source_tag(mut self, tag: impl Into<String>) -> Self {
        self.source_tag = tag.into();
        self
    }
}

/// Parameters of the log-mel front end. Times are in seconds, frequencies in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelConfig {
    pub n_mels: usize,
    pub window: f64,
    pub hop: f64,
    pub fft_size: usize,
    pub mel_low: f64,
    pub mel_high: f64,
    pub floor: f64,
}

impl Default for LogMelConfig {
    fn default() -> Self {
        Self {
            n_mels: 40,
            window: 0.025,
            hop: 0.020,
            fft_size: 512,
            mel_low: 20.0,
            mel_high: 7600.0,
            floor: 1e-10,
        }
    }
}

impl LogMelConfig {
    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.window * sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop * sample_rate as f64).round() as usize
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        let bad = |msg: String| Err(Error::InvariantViolation(msg));
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1".into());
        }
        if !(0.0 < self.mel_low && self.mel_low < self.mel_high && self.mel_high <= nyquist) {
            return bad(format!(
                "mel range must satisfy 0 < {} < {} <= {nyquist}",
                self.mel_low, self.mel_high
            ));
        }
        if !(self.hop > 0.0 && self.hop <= self.window) {
            return bad(format!("hop {} must be positive and at most window {}", self.hop, self.window));
        }
        if self.hop_samples(sample_rate) == 0 {
            return bad("hop shorter than one sample".into());
        }
        if self.fft_size < self.window_samples(sample_rate) {
            return bad(format!(
                "fft size {} smaller than window of {} samples",
                self.fft_size,
                self.window_samples(sample_rate)
            ));
        }
        if !(self.floor > 0.0) {
            return bad("log floor must be positive".into());
        }
        Ok(())
    }

    /// Center frequencies (Hz) of the triangular mel filters.
    pub fn mel_centers(&self) -> Vec<f64> {
        mel_points(self.mel_low, self.mel_high, self.n_mels)[1..=self.n_mels].to_vec()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `n_mels + 2` edge frequencies equally spaced on the mel scale.
fn mel_points(low: f64, high: f64, n_mels: usize) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(low), hz_to_mel(high));
    (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Triangular filters with unit peak, as an `n_mels x (fft_size/2 + 1)` matrix.
fn mel_filterbank(cfg: &LogMelConfig, sample_rate: u32) -> Vec<Vec<f64>> {
    let n_bins = cfg.fft_size / 2 + 1;
    let edges = mel_points(cfg.mel_low, cfg.mel_high, cfg.n_mels);
    let bin_hz = sample_rate as f64 / cfg.fft_size as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= left || f >= right {
                        0.0
                    } else if f <= center {
                        (f - left) / (center - left)
                    } else {
                        (right - f) / (right - center)
                    }
                })
                .collect()
        })
        .collect()
}

fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos())
        .collect()
}

/// Reusable log-mel extractor; holds the FFT plan, window and filterbank for
/// one sample rate.
pub struct LogMelExtractor {
    cfg: LogMelConfig,
    sample_rate: u32,
    window: Vec<f64>,
    filters: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl LogMelExtractor {
    pub fn new(cfg: LogMelConfig, sample_rate: u32) -> Result<Self> {
        cfg.validate(sample_rate)?;
        let window = hann(cfg.window_samples(sample_rate));
        let filters = mel_filterbank(&cfg, sample_rate);
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        Ok(Self { cfg, sample_rate, window, filters, fft })
    }

    pub fn config(&self) -> &LogMelConfig {
        &self.cfg
    }

    pub fn num_frames(&self, num_samples: usize) -> usize {
        let win = self.window.len();
        if num_samples < win {
            0
        } else {
            1 + (num_samples - win) / self.cfg.hop_samples(self.sample_rate)
        }
    }

    pub fn extract(&self, w: &Waveform) -> Result<FeatureSequence> {
        if w.sample_rate() != self.sample_rate {
            return Err(Error::InvariantViolation(format!(
                "extractor configured for {} Hz, waveform is {} Hz",
                self.sample_rate,
                w.sample_rate()
            )));
        }
        let win = self.window.len();
        let samples = w.samples();
        let num_frames = self.num_frames(samples.len());
        if num_frames == 0 {
            return Err(Error::TooShort { samples: samples.len(), window: win });
        }
        let hop = self.cfg.hop_samples(self.sample_rate);
        let n_bins = self.cfg.fft_size / 2 + 1;
        let log_floor = self.cfg.floor.ln();
        let mut buf = vec![Complex::new(0.0, 0.0); self.cfg.fft_size];
        let mut power = vec![0.0f64; n_bins];
        let mut out = Vec::with_capacity(num_frames * self.cfg.n_mels);
        for t in 0..num_frames {
            let start = t * hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = if i < win {
                    Complex::new(samples[start + i] as f64 * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for filter in &self.filters {
                let energy: f64 = filter.iter().zip(&power).map(|(f, p)| f * p).sum();
                let v = (energy + self.cfg.floor).ln().max(log_floor);
                out.push(v as f32);
            }
        }
        FeatureSequence::new(
            out,
            num_frames,
            self.cfg.n_mels,
            self.cfg.hop,
            format!("logmel{}", self.cfg.n_mels),
        )
    }
}

/// Log-mel features of a waveform: `log(mel energies + floor)` over a Hann
/// windowed power spectrum, one frame per hop with no padding.
pub fn extract_logmel(w: &Waveform, cfg: &LogMelConfig) -> Result<FeatureSequence> {
    LogMelExtractor::new(cfg.clone(), w.sample_rate())?.extract(w)
}

pub fn encode_features(fs: &FeatureSequence) -> Vec<u8> {
    let mut w = Writer::new(FEATURE_MAGIC, FEATURE_VERSION);
    w.u32(fs.num_frames as u32);
    w.u32(fs.dim as u32);
    w.f32s(fs.frames.iter().copied());
    w.finish()
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureSequence> {
    let (mut r, version) = Reader::open(bytes, FEATURE_MAGIC)?;
    check_version(version, FEATURE_VERSION)?;
    let t = r.u32()? as usize;
    let d = r.u32()? as usize;
    if t == 0 || d == 0 {
        return Err(Error::InvariantViolation(format!("feature file declares {t}x{d} matrix")));
    }
    let expected = t * d * 4;
    if r.remaining() > expected {
        return Err(Error::DimensionMismatch { expected, got: r.remaining() });
    }
    let frames = r.f32s(t * d)?;
    FeatureSequence::new(frames, t, d, DEFAULT_HOP_SECS, "imported")
}

pub fn write_features(fs: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_features(fs))?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    decode_features(&std::fs::read(path)?)
}
