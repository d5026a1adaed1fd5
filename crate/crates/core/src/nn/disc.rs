use super::{Binding, Graph, ModelConfig, Result, Var};
use crate::signal::{SpectrogramConfig, WindowKind};

/// Floor inside the log-magnitude features.
const LOG_EPS: f64 = 1e-5;

/// Tape handles of one discriminator applied to one waveform.
#[derive(Debug, Clone)]
pub struct DiscOutput {
    /// `[1, F']` logit map.
    pub logits: Var,
    /// Activations after the first two convolutions.
    pub features: Vec<Var>,
}

/// Spectrogram settings of discriminator `k`: `n_fft = 4 * hop`, Hann window.
pub fn disc_spectrogram(cfg: &ModelConfig, k: usize) -> SpectrogramConfig {
    let hop = cfg.disc_hops[k];
    SpectrogramConfig { n_fft: 4 * hop, hop, window: WindowKind::Hann, band_count: cfg.disc_bands }
}

/// Band-pooled magnitudes and their logs, stacked as `2B` channels, through three convolutions.
pub fn discriminator_forward(g: &mut Graph, b: &Binding, cfg: &ModelConfig, k: usize, x: Var) -> Result<DiscOutput> {
    let spec = disc_spectrogram(cfg, k);
    let mag = g.stft_mag(x, spec, cfg.codec.sample_rate)?;
    // a full-scale sinusoid peaks near 0.5 after this scaling
    let mag = g.scale(mag, 2.0 / spec.n_fft as f64);
    let bands = g.band_mean(mag, cfg.disc_bands)?;
    let logs = g.log_eps(bands, LOG_EPS);
    let feats = g.concat_cols(bands, logs)?;
    let h = g.transpose(feats)?;
    let conv = |g: &mut Graph, id: &str, h: Var, stride: usize| -> Result<Var> {
        let (w, bias) = (b.get(&format!("disc{k}.{id}.weight"))?, b.get(&format!("disc{k}.{id}.bias"))?);
        g.conv1d(h, w, bias, stride, 1, 1)
    };
    let h1 = conv(g, "conv1", h, 1)?;
    let h1 = g.tanh(h1);
    let h2 = conv(g, "conv2", h1, 2)?;
    let h2 = g.tanh(h2);
    let logits = conv(g, "conv3", h2, 1)?;
    Ok(DiscOutput { logits, features: vec![h1, h2] })
}
