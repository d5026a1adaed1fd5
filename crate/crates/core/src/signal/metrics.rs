use super::{stft_magnitude, AudioBuffer, Result, SignalError, SpectrogramConfig};

pub const SNR_CAP_DB: f64 = 100.0;
pub const LSD_EPSILON: f64 = 1e-8;

/// Signal-to-noise ratio of `est` against `reference`, capped at +100 dB.
pub fn snr_db(reference: &AudioBuffer, est: &AudioBuffer) -> Result<f64> {
    if reference.len() != est.len() {
        return Err(SignalError::LengthMismatch(reference.len(), est.len()));
    }
    let signal: f64 = reference.samples().iter().map(|s| s * s).sum();
    if signal == 0.0 {
        return Err(SignalError::ZeroReference);
    }
    let noise: f64 = reference.samples().iter().zip(est.samples()).map(|(a, b)| (a - b) * (a - b)).sum();
    if noise == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (signal / noise).log10()).min(SNR_CAP_DB))
}

/// RMS over all time-frequency bins of `log10(|X|+eps) - log10(|Y|+eps)`.
pub fn log_spectral_distance(reference: &AudioBuffer, est: &AudioBuffer, cfg: &SpectrogramConfig) -> Result<f64> {
    if reference.len() != est.len() {
        return Err(SignalError::LengthMismatch(reference.len(), est.len()));
    }
    let a = stft_magnitude(reference, cfg)?;
    let b = stft_magnitude(est, cfg)?;
    let n = a.data().len() as f64;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = (x + LSD_EPSILON).log10() - (y + LSD_EPSILON).log10();
            d * d
        })
        .sum();
    Ok((sum / n).sqrt())
}
