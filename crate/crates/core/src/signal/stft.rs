use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{AudioBuffer, FeatureGrid, Result, SignalError, SpectrogramConfig};

/// Number of frames produced for `len` samples (input shorter than `n_fft` is zero-padded).
pub fn stft_frame_count(len: usize, cfg: &SpectrogramConfig) -> usize {
    let padded = len.max(cfg.n_fft);
    1 + (padded - cfg.n_fft) / cfg.hop
}

/// Windowed DFT magnitudes, frame `t` covering samples `[t*hop, t*hop + n_fft)`.
pub fn stft_magnitude(audio: &AudioBuffer, cfg: &SpectrogramConfig) -> Result<FeatureGrid> {
    cfg.validate()?;
    let spec = complex_spectrogram(audio.samples(), cfg);
    let data = spec.iter().map(|c| c.norm()).collect();
    FeatureGrid::new(data, stft_frame_count(audio.len(), cfg), cfg.bins())
}

/// Vector-Jacobian product of [`stft_magnitude`]: maps a gradient on the
/// magnitude grid back to the samples. Bins with zero magnitude contribute
/// nothing (subgradient 0).
pub fn stft_magnitude_vjp(samples: &[f64], cfg: &SpectrogramConfig, grad: &FeatureGrid) -> Result<Vec<f64>> {
    cfg.validate()?;
    let frames = stft_frame_count(samples.len(), cfg);
    let bins = cfg.bins();
    if grad.frames() != frames || grad.dim() != bins {
        return Err(SignalError::InvalidGrid(format!(
            "gradient {}x{} does not match spectrogram {frames}x{bins}",
            grad.frames(),
            grad.dim()
        )));
    }
    let n = cfg.n_fft;
    let window = cfg.window.coefficients(n);
    let spec = complex_spectrogram(samples, cfg);
    let mut planner = FftPlanner::<f64>::new();
    let inverse = planner.plan_fft_inverse(n);
    let mut out = vec![0.0; samples.len().max(n)];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for t in 0..frames {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for k in 0..bins {
            let x = spec[t * bins + k];
            let mag = x.norm();
            if mag > 0.0 {
                buf[k] = x * (grad.row(t)[k] / mag);
            }
        }
        // sum_k c_k e^{+i 2 pi k n / N}; real part gives d|X_k|/dx_n weighting
        inverse.process(&mut buf);
        let start = t * cfg.hop;
        for (i, c) in buf.iter().enumerate() {
            out[start + i] += window[i] * c.re;
        }
    }
    out.truncate(samples.len());
    Ok(out)
}

fn complex_spectrogram(samples: &[f64], cfg: &SpectrogramConfig) -> Vec<Complex<f64>> {
    let n = cfg.n_fft;
    let bins = cfg.bins();
    let frames = stft_frame_count(samples.len(), cfg);
    let window = cfg.window.coefficients(n);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut out = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for t in 0..frames {
        let start = t * cfg.hop;
        for (i, c) in buf.iter_mut().enumerate() {
            let s = samples.get(start + i).copied().unwrap_or(0.0);
            *c = Complex::new(s * window[i], 0.0);
        }
        fft.process(&mut buf);
        out.extend_from_slice(&buf[..bins]);
    }
    out
}

/// Widths of `bands` contiguous bands over `bins`; the first `bins % bands` get one extra bin.
pub fn subband_widths(bins: usize, bands: usize) -> Result<Vec<usize>> {
    if bands == 0 || bands > bins {
        return Err(SignalError::InvalidBandCount { bands, bins });
    }
    let base = bins / bands;
    let extra = bins % bands;
    Ok((0..bands).map(|b| base + usize::from(b < extra)).collect())
}

/// Splits the frequency axis of a spectrogram into contiguous bands.
pub fn subband_split(spec: &FeatureGrid, bands: usize) -> Result<Vec<FeatureGrid>> {
    let widths = subband_widths(spec.dim(), bands)?;
    let mut start = 0;
    widths
        .into_iter()
        .map(|w| {
            let data = spec.rows().flat_map(|r| r[start..start + w].iter().copied()).collect();
            start += w;
            FeatureGrid::new(data, spec.frames(), w)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::WindowKind;

    fn rect(n_fft: usize, hop: usize) -> SpectrogramConfig {
        SpectrogramConfig::new(n_fft, hop, WindowKind::Rectangular, 1).unwrap()
    }

    /// Direct O(N^2) DFT magnitude of one frame.
    fn dft_magnitudes(frame: &[f64]) -> Vec<f64> {
        let n = frame.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &x) in frame.iter().enumerate() {
                    let a = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                    re += x * a.cos();
                    im += x * a.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn zero_audio_gives_zero_grid() {
        let a = AudioBuffer::new(vec![0.0; 1000], 16000).unwrap();
        let g = stft_magnitude(&a, &SpectrogramConfig::default()).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
        assert_eq!(g.frames(), 1 + (1000 - 512) / 128);
    }

    #[test]
    fn impulse_is_flat() {
        let mut s = vec![0.0; 8];
        s[0] = 1.0;
        let g = stft_magnitude(&AudioBuffer::new(s, 16000).unwrap(), &rect(8, 8)).unwrap();
        assert_eq!(g.frames(), 1);
        for &v in g.row(0) {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bin_centred_sine_matches_direct_dft() {
        let n = 64;
        let s: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * 2.0 * i as f64 / n as f64).sin()).collect();
        let oracle = dft_magnitudes(&s);
        let g = stft_magnitude(&AudioBuffer::new(s, 16000).unwrap(), &rect(n, n)).unwrap();
        let peak = g.row(0)[2];
        assert!((peak - oracle[2]).abs() < 1e-9 * oracle[2]);
        for (k, (&v, &o)) in g.row(0).iter().zip(&oracle).enumerate() {
            assert!((v - o).abs() < 1e-9 * peak, "bin {k}");
            if k != 2 {
                assert!(v < 1e-9 * peak, "bin {k} leaked {v}");
            }
        }
    }

    #[test]
    fn short_input_is_padded() {
        let a = AudioBuffer::new(vec![1.0; 3], 16000).unwrap();
        let g = stft_magnitude(&a, &rect(8, 4)).unwrap();
        assert_eq!((g.frames(), g.dim()), (1, 5));
        assert!((g.row(0)[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn band_widths() {
        let spec = FeatureGrid::new((0..12).map(f64::from).collect(), 2, 6).unwrap();
        let w: Vec<_> = subband_split(&spec, 3).unwrap().iter().map(FeatureGrid::dim).collect();
        assert_eq!(w, vec![2, 2, 2]);
        assert_eq!(subband_widths(7, 3).unwrap(), vec![3, 2, 2]);
        assert_eq!(subband_split(&spec, 1).unwrap()[0], spec);
        assert!(matches!(subband_split(&spec, 7), Err(SignalError::InvalidBandCount { .. })));
    }
}
