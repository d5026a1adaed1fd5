//! Waveforms, frame grids, spectrograms and the interpolation rules shared by
//! the quantizer and the losses.

mod interp;
mod metrics;
mod stft;
mod wav;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use interp::{downsample_frames, downsampled_len, upsample_frames, InterpPlan};
pub use metrics::{log_spectral_distance, snr_db, LSD_EPSILON, SNR_CAP_DB};
pub use stft::{stft_frame_count, stft_magnitude, stft_magnitude_vjp, subband_split, subband_widths};
pub use wav::{load_wav, save_wav};

/// Sample rate every codec configuration in this crate is trained for.
pub const CANONICAL_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("unsupported wav format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt wav header: {0}")]
    CorruptHeader(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid band count {bands} for {bins} frequency bins")]
    InvalidBandCount { bands: usize, bins: usize },
    #[error("invalid stride {0}, must be >= 1")]
    InvalidStride(usize),
    #[error("invalid target length {0}")]
    InvalidLength(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("reference signal has zero power")]
    ZeroReference,
    #[error("invalid audio: {0}")]
    InvalidAudio(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid spectrogram config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, SignalError>;

/// Mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(SignalError::InvalidAudio("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(SignalError::InvalidAudio(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
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

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// A `frames x dim` row-major matrix of frame vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    data: Vec<f64>,
    frames: usize,
    dim: usize,
}

impl FeatureGrid {
    pub fn new(data: Vec<f64>, frames: usize, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(SignalError::InvalidGrid("dim must be positive".into()));
        }
        if data.len() != frames * dim {
            return Err(SignalError::InvalidGrid(format!("{} values cannot form a {frames}x{dim} grid", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SignalError::InvalidGrid("non-finite entry".into()));
        }
        Ok(Self { data, frames, dim })
    }

    pub fn zeros(frames: usize, dim: usize) -> Self {
        assert!(dim > 0, "grid dim must be positive");
        Self { data: vec![0.0; frames * dim], frames, dim }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(SignalError::InvalidGrid("ragged rows".into()));
        }
        Self::new(rows.concat(), rows.len(), dim)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Keeps the first `frames` rows.
    pub fn truncated(&self, frames: usize) -> Self {
        let frames = frames.min(self.frames);
        Self { data: self.data[..frames * self.dim].to_vec(), frames, dim: self.dim }
    }

    /// Element-wise `self - other`; shapes must agree.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Element-wise `self + other`; shapes must agree.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.frames != other.frames || self.dim != other.dim {
            return Err(SignalError::InvalidGrid(format!(
                "shape {}x{} vs {}x{}",
                self.frames, self.dim, other.frames, other.dim
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { data, frames: self.frames, dim: self.dim })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowKind::Rectangular => vec![1.0; n],
            WindowKind::Hann => {
                (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
            }
        }
    }
}

impl std::str::FromStr for WindowKind {
    type Err = SignalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hann" => Ok(WindowKind::Hann),
            "rectangular" | "rect" => Ok(WindowKind::Rectangular),
            other => Err(SignalError::InvalidConfig(format!("unknown window '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpectrogramConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub band_count: usize,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self { n_fft: 512, hop: 128, window: WindowKind::Hann, band_count: 4 }
    }
}

impl SpectrogramConfig {
    pub fn new(n_fft: usize, hop: usize, window: WindowKind, band_count: usize) -> Result<Self> {
        let cfg = Self { n_fft, hop, window, band_count };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !self.n_fft.is_power_of_two() || self.n_fft < 2 {
            return Err(SignalError::InvalidConfig(format!("n_fft {} is not a power of two", self.n_fft)));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(SignalError::InvalidConfig(format!("hop {} outside 1..={}", self.hop, self.n_fft)));
        }
        if self.band_count == 0 || self.band_count > self.bins() {
            return Err(SignalError::InvalidBandCount { bands: self.band_count, bins: self.bins() });
        }
        Ok(())
    }
}
