//! Training objectives as pure functions.
//!
//! Every loss has a value function and a `*_with_grad` companion returning the
//! analytic gradient with respect to its differentiable inputs. All L1/L2
//! terms use mean reduction. Subgradients of `|.|` and of the hinge at their
//! kinks are 0.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{
    stft_magnitude, stft_magnitude_vjp, subband_widths, AudioBuffer, FeatureGrid, InterpPlan, SignalError,
    SpectrogramConfig,
};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("discriminator outputs are not congruent: {0}")]
    StructureMismatch(String),
    #[error("missing loss part {0:?}")]
    MissingPart(LossTerm),
    #[error("non-finite loss part {0:?}")]
    NonFinitePart(LossTerm),
    #[error("guidance file: {0}")]
    Guidance(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LossError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossTerm {
    Time,
    Freq,
    Adv,
    Feat,
    Sem,
    Cons,
    Commit,
}

impl LossTerm {
    pub const ALL: [LossTerm; 7] = [
        LossTerm::Time,
        LossTerm::Freq,
        LossTerm::Adv,
        LossTerm::Feat,
        LossTerm::Sem,
        LossTerm::Cons,
        LossTerm::Commit,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_time: f64,
    pub w_freq: f64,
    pub w_adv: f64,
    pub w_feat: f64,
    pub w_sem: f64,
    pub w_cons: f64,
    pub w_commit: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_time: 1.0, w_freq: 1.0, w_adv: 1.0, w_feat: 1.0, w_sem: 1.0, w_cons: 1.0, w_commit: 0.25 }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self { w_time: 0.0, w_freq: 0.0, w_adv: 0.0, w_feat: 0.0, w_sem: 0.0, w_cons: 0.0, w_commit: 0.0 }
    }

    pub fn get(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::Time => self.w_time,
            LossTerm::Freq => self.w_freq,
            LossTerm::Adv => self.w_adv,
            LossTerm::Feat => self.w_feat,
            LossTerm::Sem => self.w_sem,
            LossTerm::Cons => self.w_cons,
            LossTerm::Commit => self.w_commit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in LossTerm::ALL {
            let w = self.get(t);
            if !w.is_finite() || w < 0.0 {
                return Err(LossError::Guidance(format!("weight for {t:?} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

/// Semantic target `g` (one vector per clip) and frame-level consistency target `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceInputs {
    pub g: Vec<f64>,
    pub w: FeatureGrid,
}

#[derive(Serialize, Deserialize)]
struct GlobalTarget {
    g: Vec<f64>,
}

const LCGW_MAGIC: &[u8; 5] = b"LCGW1";

impl GuidanceInputs {
    pub fn new(g: Vec<f64>, w: FeatureGrid) -> Result<Self> {
        if g.len() != w.dim() {
            return Err(LossError::DimensionMismatch(format!("g has {} dims, w has {}", g.len(), w.dim())));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(LossError::Guidance("non-finite value in g".into()));
        }
        Ok(Self { g, w })
    }

    pub fn load(g_path: impl AsRef<Path>, w_path: impl AsRef<Path>) -> Result<Self> {
        let g = parse_global_target(&fs::read_to_string(g_path)?)?;
        let w = decode_grid(&fs::read(w_path)?)?;
        Self::new(g, w)
    }
}

pub fn parse_global_target(text: &str) -> Result<Vec<f64>> {
    let t: GlobalTarget = serde_json::from_str(text).map_err(|e| LossError::Guidance(e.to_string()))?;
    Ok(t.g)
}

pub fn global_target_json(g: &[f64]) -> String {
    serde_json::to_string(&GlobalTarget { g: g.to_vec() }).expect("vector serializes")
}

/// LCGW1: magic, u32 frames, u32 dim, frames*dim little-endian f32.
pub fn encode_grid(grid: &FeatureGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + grid.data().len() * 4);
    out.extend_from_slice(LCGW_MAGIC);
    out.extend_from_slice(&(grid.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.dim() as u32).to_le_bytes());
    for &v in grid.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<FeatureGrid> {
    if bytes.len() < 13 || &bytes[..5] != LCGW_MAGIC {
        return Err(LossError::Guidance("bad LCGW1 header".into()));
    }
    let frames = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let body = &bytes[13..];
    if body.len() != frames * dim * 4 {
        return Err(LossError::Guidance(format!("expected {} value bytes, found {}", frames * dim * 4, body.len())));
    }
    let data = body.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap()))).collect();
    Ok(FeatureGrid::new(data, frames, dim)?)
}

/// Per-discriminator logits (any map shape, flattened) and intermediate features.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiscriminatorOutputs {
    pub logits: Vec<Vec<f64>>,
    pub features: Vec<Vec<Vec<f64>>>,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(LossError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(LossError::ShapeMismatch("empty input".into()));
    }
    Ok(())
}

/// Mean absolute sample difference.
pub fn recon_time_l1(x: &AudioBuffer, x_hat: &AudioBuffer) -> Result<f64> {
    check_len(x.len(), x_hat.len())?;
    Ok(mean_abs_diff(x.samples(), x_hat.samples()))
}

/// Gradient with respect to `x_hat`.
pub fn recon_time_l1_with_grad(x: &AudioBuffer, x_hat: &AudioBuffer) -> Result<(f64, Vec<f64>)> {
    let value = recon_time_l1(x, x_hat)?;
    let n = x.len() as f64;
    let grad = x.samples().iter().zip(x_hat.samples()).map(|(a, b)| sign(b - a) / n).collect();
    Ok((value, grad))
}

/// Mean over sub-bands of the mean absolute spectrogram-magnitude difference.
pub fn recon_freq_l1(x: &AudioBuffer, x_hat: &AudioBuffer, cfg: &SpectrogramConfig) -> Result<f64> {
    Ok(freq_terms(x, x_hat, cfg)?.0)
}

pub fn recon_freq_l1_with_grad(
    x: &AudioBuffer,
    x_hat: &AudioBuffer,
    cfg: &SpectrogramConfig,
) -> Result<(f64, Vec<f64>)> {
    let (value, mag_grad) = freq_terms(x, x_hat, cfg)?;
    let grad = stft_magnitude_vjp(x_hat.samples(), cfg, &mag_grad)?;
    Ok((value, grad))
}

fn freq_terms(x: &AudioBuffer, x_hat: &AudioBuffer, cfg: &SpectrogramConfig) -> Result<(f64, FeatureGrid)> {
    check_len(x.len(), x_hat.len())?;
    let a = stft_magnitude(x, cfg)?;
    let b = stft_magnitude(x_hat, cfg)?;
    let widths = subband_widths(a.dim(), cfg.band_count)?;
    let bands = widths.len() as f64;
    let frames = a.frames();
    let mut grad = FeatureGrid::zeros(frames, a.dim());
    let mut total = 0.0;
    let mut start = 0;
    for &w in &widths {
        let scale = 1.0 / (bands * (frames * w) as f64);
        let mut band_sum = 0.0;
        for t in 0..frames {
            for k in start..start + w {
                let d = b.row(t)[k] - a.row(t)[k];
                band_sum += d.abs();
                grad.row_mut(t)[k] = sign(d) * scale;
            }
        }
        total += band_sum / (frames * w) as f64;
        start += w;
    }
    Ok((total / bands, grad))
}

fn check_congruent(real: &[Vec<f64>], fake: &[Vec<f64>]) -> Result<()> {
    if real.is_empty() {
        return Err(LossError::StructureMismatch("no discriminators".into()));
    }
    if real.len() != fake.len() {
        return Err(LossError::StructureMismatch(format!("{} vs {} discriminators", real.len(), fake.len())));
    }
    for (k, (r, f)) in real.iter().zip(fake).enumerate() {
        if r.len() != f.len() || r.is_empty() {
            return Err(LossError::StructureMismatch(format!("discriminator {k}: {} vs {} logits", r.len(), f.len())));
        }
    }
    Ok(())
}

/// `(1/K) sum_k [max(0, 1 - D_k(x)) + max(0, 1 + D_k(x_hat))]`, each logit map reduced by its mean.
pub fn disc_hinge_loss(real: &DiscriminatorOutputs, fake: &DiscriminatorOutputs) -> Result<f64> {
    Ok(disc_hinge_loss_with_grad(real, fake)?.0)
}

/// Gradients with respect to the real and fake logits.
pub fn disc_hinge_loss_with_grad(
    real: &DiscriminatorOutputs,
    fake: &DiscriminatorOutputs,
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    check_congruent(&real.logits, &fake.logits)?;
    let k = real.logits.len() as f64;
    let mut value = 0.0;
    let mut g_real = Vec::with_capacity(real.logits.len());
    let mut g_fake = Vec::with_capacity(real.logits.len());
    for (r, f) in real.logits.iter().zip(&fake.logits) {
        let (mr, mf) = (mean(r), mean(f));
        let (hr, hf) = (1.0 - mr, 1.0 + mf);
        value += hr.max(0.0) + hf.max(0.0);
        let dr = if hr > 0.0 { -1.0 / (k * r.len() as f64) } else { 0.0 };
        let df = if hf > 0.0 { 1.0 / (k * f.len() as f64) } else { 0.0 };
        g_real.push(vec![dr; r.len()]);
        g_fake.push(vec![df; f.len()]);
    }
    Ok((value / k, g_real, g_fake))
}

/// `(1/K) sum_k max(0, 1 - D_k(x_hat))`.
pub fn gen_adv_loss(fake: &DiscriminatorOutputs) -> Result<f64> {
    Ok(gen_adv_loss_with_grad(fake)?.0)
}

pub fn gen_adv_loss_with_grad(fake: &DiscriminatorOutputs) -> Result<(f64, Vec<Vec<f64>>)> {
    check_congruent(&fake.logits, &fake.logits)?;
    let k = fake.logits.len() as f64;
    let mut value = 0.0;
    let grad = fake
        .logits
        .iter()
        .map(|f| {
            let h = 1.0 - mean(f);
            value += h.max(0.0);
            vec![if h > 0.0 { -1.0 / (k * f.len() as f64) } else { 0.0 }; f.len()]
        })
        .collect();
    Ok((value / k, grad))
}

/// Mean over (discriminator, layer) pairs of the mean absolute feature difference.
pub fn feature_match_loss(real: &[Vec<Vec<f64>>], fake: &[Vec<Vec<f64>>]) -> Result<f64> {
    Ok(feature_match_loss_with_grad(real, fake)?.0)
}

/// Gradient with respect to the fake features.
pub fn feature_match_loss_with_grad(
    real: &[Vec<Vec<f64>>],
    fake: &[Vec<Vec<f64>>],
) -> Result<(f64, Vec<Vec<Vec<f64>>>)> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(LossError::StructureMismatch(format!("{} vs {} discriminators", real.len(), fake.len())));
    }
    let pairs: usize = real.iter().map(Vec::len).sum();
    if pairs == 0 {
        return Err(LossError::StructureMismatch("no feature layers".into()));
    }
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(fake.len());
    for (k, (rl, fl)) in real.iter().zip(fake).enumerate() {
        if rl.len() != fl.len() {
            return Err(LossError::StructureMismatch(format!(
                "discriminator {k}: {} vs {} layers",
                rl.len(),
                fl.len()
            )));
        }
        let mut layers = Vec::with_capacity(fl.len());
        for (r, f) in rl.iter().zip(fl) {
            if r.len() != f.len() || r.is_empty() {
                return Err(LossError::StructureMismatch(format!(
                    "discriminator {k}: layer sizes {} vs {}",
                    r.len(),
                    f.len()
                )));
            }
            value += mean_abs_diff(r, f);
            let scale = 1.0 / (pairs * f.len()) as f64;
            layers.push(r.iter().zip(f).map(|(a, b)| sign(b - a) * scale).collect());
        }
        grad.push(layers);
    }
    Ok((value / pairs as f64, grad))
}

/// L1 between the time-mean of the up-sampled first-layer grid and `g`.
pub fn semantic_loss(e1_full: &FeatureGrid, g: &[f64]) -> Result<f64> {
    Ok(semantic_loss_with_grad(e1_full, g)?.0)
}

pub fn semantic_loss_with_grad(e1_full: &FeatureGrid, g: &[f64]) -> Result<(f64, FeatureGrid)> {
    if e1_full.dim() != g.len() {
        return Err(LossError::DimensionMismatch(format!("grid dim {} vs target dim {}", e1_full.dim(), g.len())));
    }
    if e1_full.frames() == 0 {
        return Err(LossError::ShapeMismatch("semantic loss needs at least one frame".into()));
    }
    let (t, d) = (e1_full.frames(), e1_full.dim());
    let mut pooled = vec![0.0; d];
    for row in e1_full.rows() {
        pooled.iter_mut().zip(row).for_each(|(p, v)| *p += v);
    }
    pooled.iter_mut().for_each(|p| *p /= t as f64);
    let value = mean_abs_diff(&pooled, g);
    let row_grad: Vec<f64> = pooled.iter().zip(g).map(|(p, q)| sign(p - q) / (d * t) as f64).collect();
    let grad = FeatureGrid::new(row_grad.repeat(t), t, d)?;
    Ok((value, grad))
}

/// L1 between the second-layer grid (native length) and `w` interpolated to that length.
pub fn consistency_loss(e2: &FeatureGrid, w: &FeatureGrid) -> Result<f64> {
    Ok(consistency_loss_with_grad(e2, w)?.0)
}

pub fn consistency_loss_with_grad(e2: &FeatureGrid, w: &FeatureGrid) -> Result<(f64, FeatureGrid)> {
    if e2.dim() != w.dim() {
        return Err(LossError::DimensionMismatch(format!("grid dim {} vs guidance dim {}", e2.dim(), w.dim())));
    }
    if e2.frames() == 0 || w.frames() == 0 {
        return Err(LossError::ShapeMismatch("consistency loss needs frames".into()));
    }
    let target = InterpPlan::new(w.frames(), e2.frames())?.apply_grid(w)?;
    let n = e2.data().len() as f64;
    let value = mean_abs_diff(e2.data(), target.data());
    let grad = e2.data().iter().zip(target.data()).map(|(a, b)| sign(a - b) / n).collect();
    Ok((value, FeatureGrid::new(grad, e2.frames(), e2.dim())?))
}

/// Mean squared difference; the quantized side is a constant.
pub fn commitment_loss(e_in: &FeatureGrid, q: &FeatureGrid) -> Result<f64> {
    Ok(commitment_loss_with_grad(e_in, q)?.0)
}

/// Gradient with respect to `e_in` only.
pub fn commitment_loss_with_grad(e_in: &FeatureGrid, q: &FeatureGrid) -> Result<(f64, FeatureGrid)> {
    if e_in.frames() != q.frames() || e_in.dim() != q.dim() {
        return Err(LossError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            e_in.frames(),
            e_in.dim(),
            q.frames(),
            q.dim()
        )));
    }
    let n = e_in.data().len() as f64;
    let diff: Vec<f64> = e_in.data().iter().zip(q.data()).map(|(a, b)| a - b).collect();
    let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = diff.iter().map(|d| 2.0 * d / n).collect();
    Ok((value, FeatureGrid::new(grad, e_in.frames(), e_in.dim())?))
}

/// Weighted sum of all seven generator terms.
pub fn total_generator_loss(weights: &LossWeights, parts: &BTreeMap<LossTerm, f64>) -> Result<f64> {
    let mut total = 0.0;
    for term in LossTerm::ALL {
        let v = *parts.get(&term).ok_or(LossError::MissingPart(term))?;
        if !v.is_finite() {
            return Err(LossError::NonFinitePart(term));
        }
        total += weights.get(term) * v;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buf(v: &[f64]) -> AudioBuffer {
        AudioBuffer::new(v.to_vec(), 16000).unwrap()
    }

    fn outputs(logits: &[f64]) -> DiscriminatorOutputs {
        DiscriminatorOutputs { logits: logits.iter().map(|&l| vec![l]).collect(), features: vec![] }
    }

    fn rows(r: &[&[f64]]) -> FeatureGrid {
        FeatureGrid::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn time_l1() {
        let x = buf(&[0.3, -0.2, 0.9]);
        assert_eq!(recon_time_l1(&x, &x).unwrap(), 0.0);
        assert_eq!(recon_time_l1(&buf(&[0.0, 1.0]), &buf(&[1.0, 1.0])).unwrap(), 0.5);
        let neg = buf(&[-0.3, 0.2, -0.9]);
        assert!((recon_time_l1(&x, &neg).unwrap() - 2.0 * (0.3 + 0.2 + 0.9) / 3.0).abs() < 1e-12);
        assert!(matches!(recon_time_l1(&x, &buf(&[0.0])), Err(LossError::LengthMismatch(3, 1))));
    }

    #[test]
    fn freq_l1() {
        let cfg = SpectrogramConfig::default();
        let x = buf(&(0..1024).map(|i| (i as f64 * 0.05).sin() * 0.5).collect::<Vec<_>>());
        assert_eq!(recon_freq_l1(&x, &x, &cfg).unwrap(), 0.0);
        let silence = buf(&[0.0; 1024]);
        let mag = stft_magnitude(&x, &cfg).unwrap();
        let widths = subband_widths(mag.dim(), cfg.band_count).unwrap();
        let mut start = 0;
        let mut oracle = 0.0;
        for w in &widths {
            let s: f64 = mag.rows().flat_map(|r| r[start..start + w].iter()).sum();
            oracle += s / (mag.frames() * w) as f64;
            start += w;
        }
        oracle /= widths.len() as f64;
        assert!((recon_freq_l1(&x, &silence, &cfg).unwrap() - oracle).abs() < 1e-12);
        let one_band = SpectrogramConfig { band_count: 1, ..cfg };
        let plain = mag.data().iter().sum::<f64>() / mag.data().len() as f64;
        assert!((recon_freq_l1(&x, &silence, &one_band).unwrap() - plain).abs() < 1e-12);
    }

    #[test]
    fn hinge_losses() {
        assert_eq!(disc_hinge_loss(&outputs(&[1.0]), &outputs(&[-1.0])).unwrap(), 0.0);
        assert_eq!(disc_hinge_loss(&outputs(&[0.0]), &outputs(&[0.0])).unwrap(), 2.0);
        assert_eq!(disc_hinge_loss(&outputs(&[1.0, -1.0]), &outputs(&[-1.0, 1.0])).unwrap(), 2.0);
        assert!(matches!(
            disc_hinge_loss(&outputs(&[1.0]), &outputs(&[1.0, 1.0])),
            Err(LossError::StructureMismatch(_))
        ));
        assert_eq!(gen_adv_loss(&outputs(&[1.0])).unwrap(), 0.0);
        assert_eq!(gen_adv_loss(&outputs(&[0.0])).unwrap(), 1.0);
        assert_eq!(gen_adv_loss(&outputs(&[-1.0])).unwrap(), 2.0);
        // map logits reduce by their mean first
        let map = DiscriminatorOutputs { logits: vec![vec![3.0, -1.0]], features: vec![] };
        assert_eq!(gen_adv_loss(&map).unwrap(), 0.0);
        // at the hinge point the subgradient is 0
        let (_, g) = gen_adv_loss_with_grad(&outputs(&[1.0])).unwrap();
        assert_eq!(g, vec![vec![0.0]]);
    }

    #[test]
    fn feature_matching() {
        let f = vec![vec![vec![1.0, 2.0], vec![3.0]]];
        assert_eq!(feature_match_loss(&f, &f).unwrap(), 0.0);
        let shifted: Vec<Vec<Vec<f64>>> =
            f.iter().map(|l| l.iter().map(|x| x.iter().map(|v| v + 1.0).collect()).collect()).collect();
        assert_eq!(feature_match_loss(&f, &shifted).unwrap(), 1.0);
        let two = vec![vec![vec![0.0, 0.0], vec![0.0]]];
        let off = vec![vec![vec![0.0, 0.0], vec![2.0]]];
        assert_eq!(feature_match_loss(&two, &off).unwrap(), 1.0);
        assert!(matches!(feature_match_loss(&two, &f[..0]), Err(LossError::StructureMismatch(_))));
    }

    #[test]
    fn semantic_cases() {
        let g = [0.5, -1.0];
        assert_eq!(semantic_loss(&rows(&[&g, &g]), &g).unwrap(), 0.0);
        assert_eq!(semantic_loss(&rows(&[&[0.0, 2.0], &[2.0, 0.0]]), &[0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(semantic_loss(&rows(&[&[2.0, -2.0]]), &[1.0, 1.0]).unwrap(), 2.0);
        assert!(matches!(semantic_loss(&rows(&[&[1.0]]), &g), Err(LossError::DimensionMismatch(_))));
    }

    #[test]
    fn semantic_ignores_frame_order() {
        let a = rows(&[&[0.1, 0.7], &[-0.4, 0.2], &[0.9, -0.3]]);
        let b = rows(&[&[0.9, -0.3], &[0.1, 0.7], &[-0.4, 0.2]]);
        let g = [0.3, 0.3];
        assert!((semantic_loss(&a, &g).unwrap() - semantic_loss(&b, &g).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn consistency_cases() {
        let e2 = rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(consistency_loss(&e2, &e2).unwrap(), 0.0);
        let w = FeatureGrid::new(vec![0.0, 1.0, 2.0, 3.0], 4, 1).unwrap();
        assert_eq!(consistency_loss(&FeatureGrid::new(vec![0.0, 3.0], 2, 1).unwrap(), &w).unwrap(), 0.0);
        let plus = FeatureGrid::new(e2.data().iter().map(|v| v + 0.5).collect(), 2, 2).unwrap();
        assert_eq!(consistency_loss(&plus, &e2).unwrap(), 0.5);
    }

    #[test]
    fn commitment_cases() {
        let a = rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(commitment_loss(&a, &a).unwrap(), 0.0);
        let b = FeatureGrid::new(a.data().iter().map(|v| v + 1.0).collect(), 2, 2).unwrap();
        assert_eq!(commitment_loss(&a, &b).unwrap(), 1.0);
        let c = FeatureGrid::new(a.data().iter().map(|v| v + 3.0).collect(), 2, 2).unwrap();
        assert_eq!(commitment_loss(&a, &c).unwrap(), 9.0);
        assert!(matches!(commitment_loss(&a, &rows(&[&[1.0, 2.0]])), Err(LossError::ShapeMismatch(_))));
    }

    #[test]
    fn weighted_total() {
        let all = |v: f64| LossTerm::ALL.iter().map(|&t| (t, v)).collect::<BTreeMap<_, _>>();
        let w = LossWeights::default();
        assert_eq!(total_generator_loss(&w, &all(0.0)).unwrap(), 0.0);
        assert_eq!(total_generator_loss(&w, &all(1.0)).unwrap(), 6.25);
        assert_eq!(total_generator_loss(&LossWeights::zero(), &all(7.0)).unwrap(), 0.0);
        let mut partial = all(1.0);
        partial.remove(&LossTerm::Cons);
        assert!(matches!(total_generator_loss(&w, &partial), Err(LossError::MissingPart(LossTerm::Cons))));
    }

    #[test]
    fn grid_file_round_trip() {
        let g = FeatureGrid::new(vec![0.5, -1.25, 3.0, 0.0], 2, 2).unwrap();
        assert_eq!(decode_grid(&encode_grid(&g)).unwrap(), g);
        assert!(decode_grid(b"LCGW1\x01\0\0\0\x01\0\0\0").is_err());
        assert_eq!(parse_global_target(&global_target_json(&[1.0, -2.0])).unwrap(), vec![1.0, -2.0]);
    }

    fn numeric(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let h = 1e-5 * (1.0 + x[i].abs());
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += h;
                m[i] -= h;
                (f(&p) - f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(analytic: &[f64], numeric: &[f64]) {
        assert_eq!(analytic.len(), numeric.len());
        for (a, n) in analytic.iter().zip(numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            assert!(rel < 1e-4, "analytic {a} vs numeric {n}");
        }
    }

    fn wave(n: usize, phase: f64) -> Vec<f64> {
        (0..n).map(|i| 0.4 * (i as f64 * 0.13 + phase).sin() + 0.2 * (i as f64 * 0.71).cos()).collect()
    }

    #[test]
    fn time_and_freq_gradients_match_differences() {
        let x = buf(&wave(96, 0.0));
        let y = wave(96, 1.1);
        let (_, g) = recon_time_l1_with_grad(&x, &buf(&y)).unwrap();
        assert_close(&g, &numeric(|v| recon_time_l1(&x, &buf(v)).unwrap(), &y));
        // DC offset keeps the two spectra apart so no kink falls within h
        let cfg =
            SpectrogramConfig { n_fft: 32, hop: 8, band_count: 4, window: crate::signal::WindowKind::Rectangular };
        let y: Vec<f64> = y.iter().map(|v| v + 0.3).collect();
        let (_, g) = recon_freq_l1_with_grad(&x, &buf(&y), &cfg).unwrap();
        assert_close(&g, &numeric(|v| recon_freq_l1(&x, &buf(v), &cfg).unwrap(), &y));
    }

    #[test]
    fn adversarial_gradients_match_differences() {
        let real = vec![0.3, -0.2, 0.5, 0.1];
        let fake = vec![-0.4, 0.6, 0.2, -0.1];
        let split =
            |v: &[f64]| DiscriminatorOutputs { logits: vec![v[..2].to_vec(), v[2..].to_vec()], features: vec![] };
        let (_, gr, gf) = disc_hinge_loss_with_grad(&split(&real), &split(&fake)).unwrap();
        assert_close(&gr.concat(), &numeric(|v| disc_hinge_loss(&split(v), &split(&fake)).unwrap(), &real));
        assert_close(&gf.concat(), &numeric(|v| disc_hinge_loss(&split(&real), &split(v)).unwrap(), &fake));
        let (_, g) = gen_adv_loss_with_grad(&split(&fake)).unwrap();
        assert_close(&g.concat(), &numeric(|v| gen_adv_loss(&split(v)).unwrap(), &fake));
    }

    #[test]
    fn feature_gradient_matches_differences() {
        let real = vec![vec![vec![0.1, 0.2, 0.3], vec![0.4]], vec![vec![-0.5, 0.6]]];
        let flat = vec![0.5, -0.1, 0.9, 0.0, 0.2, 0.1];
        let nest = |v: &[f64]| vec![vec![v[..3].to_vec(), vec![v[3]]], vec![v[4..].to_vec()]];
        let (_, g) = feature_match_loss_with_grad(&real, &nest(&flat)).unwrap();
        let g: Vec<f64> = g.into_iter().flatten().flatten().collect();
        assert_close(&g, &numeric(|v| feature_match_loss(&real, &nest(v)).unwrap(), &flat));
    }

    #[test]
    fn latent_gradients_match_differences() {
        let e = wave(12, 0.4);
        let grid = |v: &[f64]| FeatureGrid::new(v.to_vec(), 4, 3).unwrap();
        let g = [0.9, -0.7, 0.05];
        let (_, a) = semantic_loss_with_grad(&grid(&e), &g).unwrap();
        assert_close(a.data(), &numeric(|v| semantic_loss(&grid(v), &g).unwrap(), &e));
        let w = FeatureGrid::new(wave(21, 2.0), 7, 3).unwrap();
        let (_, a) = consistency_loss_with_grad(&grid(&e), &w).unwrap();
        assert_close(a.data(), &numeric(|v| consistency_loss(&grid(v), &w).unwrap(), &e));
        let q = grid(&wave(12, 2.5));
        let (_, a) = commitment_loss_with_grad(&grid(&e), &q).unwrap();
        assert_close(a.data(), &numeric(|v| commitment_loss(&grid(v), &q).unwrap(), &e));
    }

    proptest::proptest! {
        #[test]
        fn losses_are_nonnegative(a in proptest::collection::vec(-1.0f64..1.0, 8), b in proptest::collection::vec(-1.0f64..1.0, 8)) {
            proptest::prop_assert!(recon_time_l1(&buf(&a), &buf(&b)).unwrap() >= 0.0);
            let ga = FeatureGrid::new(a.clone(), 4, 2).unwrap();
            let gb = FeatureGrid::new(b.clone(), 4, 2).unwrap();
            proptest::prop_assert!(commitment_loss(&ga, &gb).unwrap() >= 0.0);
            proptest::prop_assert!(consistency_loss(&ga, &gb).unwrap() >= 0.0);
            proptest::prop_assert!(semantic_loss(&ga, &b[..2]).unwrap() >= 0.0);
            let o = |v: &[f64]| DiscriminatorOutputs { logits: vec![v.to_vec()], features: vec![] };
            proptest::prop_assert!(disc_hinge_loss(&o(&a), &o(&b)).unwrap() >= 0.0);
            proptest::prop_assert!(gen_adv_loss(&o(&b)).unwrap() >= 0.0);
        }
    }
}
