//! Multi-scale residual vector quantization.
//!
//! Layer `i` down-samples the running residual by its stride `k_i`, snaps
//! every frame to the nearest projected codebook entry, up-samples the result
//! back to the full frame count and subtracts it from the residual:
//!
//! ```text
//! R_1 = E
//! D_i = down(R_i, k_i);  Q_i = nearest(D_i);  U_i = up(Q_i, T);  R_{i+1} = R_i - U_i
//! ```
//!
//! Decoding sums the up-sampled layer contributions.

use std::fmt::Write as _;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{Codebook, CodebookError};
use crate::signal::{downsample_frames, downsampled_len, upsample_frames, FeatureGrid, SignalError};

/// Separator placed between layers in rendered token text.
pub const LAYER_SEPARATOR: &str = " <L> ";

#[derive(Debug, Error)]
pub enum QuantizerError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("config digest mismatch: stream {stream:016x}, expected {expected:016x}")]
    DigestMismatch { stream: u64, expected: u64 },
    #[error("index {index} out of range for layer {layer} (codebook size {size})")]
    IndexOutOfRange { layer: usize, index: usize, size: usize },
    #[error("unknown label '{0}'")]
    UnknownLabel(String),
    #[error("expected {expected} layers, found {found}")]
    LayerCountMismatch { expected: usize, found: usize },
    #[error("layer {layer} has {found} tokens, expected {expected}")]
    LayerLengthMismatch { layer: usize, found: usize, expected: usize },
    #[error("invalid layer selection: {0}")]
    InvalidSelection(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error("token stream: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, QuantizerError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub sample_rate: u32,
    pub encoder_strides: Vec<usize>,
    pub latent_dim: usize,
    pub vq_strides: Vec<usize>,
}

impl CodecConfig {
    /// Full-size setting: 480x encoder down-sampling, 512-dim latents, VQ strides [4, 2, 1].
    pub fn canonical() -> Self {
        Self { sample_rate: 16_000, encoder_strides: vec![3, 4, 5, 8], latent_dim: 512, vq_strides: vec![4, 2, 1] }
    }

    /// Canonical strides with 64-dim latents.
    pub fn desk() -> Self {
        Self { latent_dim: 64, ..Self::canonical() }
    }

    pub fn total_downsample(&self) -> usize {
        self.encoder_strides.iter().product()
    }

    pub fn layers(&self) -> usize {
        self.vq_strides.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.latent_dim == 0 {
            return Err(QuantizerError::InvalidConfig("sample rate and latent dim must be positive".into()));
        }
        if self.encoder_strides.is_empty() || self.encoder_strides.contains(&0) {
            return Err(QuantizerError::InvalidConfig("encoder strides must be >= 1".into()));
        }
        if self.vq_strides.contains(&0) {
            return Err(QuantizerError::InvalidConfig("vq strides must be >= 1".into()));
        }
        if self.vq_strides.last() != Some(&1) {
            return Err(QuantizerError::InvalidConfig("last vq stride must be 1".into()));
        }
        Ok(())
    }

    /// Stable textual form hashed into stream digests.
    pub fn canonical_string(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        format!(
            "sample_rate={};encoder_strides={};latent_dim={};vq_strides={}",
            self.sample_rate,
            join(&self.encoder_strides),
            self.latent_dim,
            join(&self.vq_strides)
        )
    }

    /// Layer lengths for `frames` encoder frames.
    pub fn layer_lengths(&self, frames: usize) -> Vec<usize> {
        self.vq_strides.iter().map(|&k| downsampled_len(frames, k)).collect()
    }
}

/// `sum_i floor(floor(sample_rate / total_downsample) / k_i)`.
pub fn tokens_per_second(sample_rate: usize, total_downsample: usize, vq_strides: &[usize]) -> usize {
    let frames = sample_rate / total_downsample;
    vq_strides.iter().map(|&k| frames / k).sum()
}

/// 64-bit FNV-1a over the config text and every codebook digest.
pub fn config_digest(cfg: &CodecConfig, books: &[Codebook]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(cfg.canonical_string().as_bytes());
    for b in books {
        h.write(&b.digest().to_le_bytes());
    }
    h.finish()
}

/// Per-layer token indices of one clip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedAudio {
    /// One index sequence per layer; an empty sequence marks a layer that is absent.
    pub layers: Vec<Vec<usize>>,
    pub strides: Vec<usize>,
    pub frame_count: usize,
    pub config_digest: u64,
}

#[derive(Serialize, Deserialize)]
struct TokenStreamFile {
    config_digest: String,
    frame_count: usize,
    layers: Vec<Vec<usize>>,
    strides: Vec<usize>,
}

impl QuantizedAudio {
    pub fn total_tokens(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&TokenStreamFile {
            config_digest: format!("{:016x}", self.config_digest),
            frame_count: self.frame_count,
            layers: self.layers.clone(),
            strides: self.strides.clone(),
        })
        .expect("token stream serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: TokenStreamFile = serde_json::from_str(text)?;
        let config_digest = u64::from_str_radix(&f.config_digest, 16)
            .map_err(|_| QuantizerError::InvalidConfig(format!("bad digest '{}'", f.config_digest)))?;
        if f.layers.len() != f.strides.len() {
            return Err(QuantizerError::LayerCountMismatch { expected: f.strides.len(), found: f.layers.len() });
        }
        Ok(Self { layers: f.layers, strides: f.strides, frame_count: f.frame_count, config_digest })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Keeps only the selected layers; the rest become empty.
    pub fn restricted(&self, selection: &LayerSelection) -> Self {
        let mut out = self.clone();
        for (i, layer) in out.layers.iter_mut().enumerate() {
            if !selection.contains(i) {
                layer.clear();
            }
        }
        out
    }
}

/// Ordered 0-based layer indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSelection(Vec<usize>);

impl LayerSelection {
    pub fn new(layers: Vec<usize>) -> Result<Self> {
        if layers.is_empty() {
            return Err(QuantizerError::InvalidSelection("empty selection".into()));
        }
        if layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(QuantizerError::InvalidSelection("layers must be strictly increasing".into()));
        }
        Ok(Self(layers))
    }

    pub fn all(layers: usize) -> Self {
        Self((0..layers).collect())
    }

    /// Only the first (semantic) layer.
    pub fn semantic() -> Self {
        Self(vec![0])
    }

    /// Parses `all`, `semantic`, or a comma list of 1-based layer numbers.
    pub fn parse(text: &str, layers: usize) -> Result<Self> {
        let sel = match text.trim() {
            "all" => Self::all(layers),
            "semantic" => Self::semantic(),
            list => {
                let parsed = list
                    .split(',')
                    .map(|s| s.trim().parse::<usize>().ok().filter(|&n| n >= 1).map(|n| n - 1))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| QuantizerError::InvalidSelection(format!("cannot parse '{list}'")))?;
                Self::new(parsed)?
            }
        };
        sel.check(layers)?;
        Ok(sel)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn contains(&self, layer: usize) -> bool {
        self.0.contains(&layer)
    }

    fn check(&self, layers: usize) -> Result<()> {
        match self.0.iter().find(|&&l| l >= layers) {
            Some(l) => Err(QuantizerError::InvalidSelection(format!("layer {} of {layers}", l + 1))),
            None => Ok(()),
        }
    }
}

/// Replaces every row by its nearest projected entry.
pub fn quantize_layer(grid: &FeatureGrid, book: &Codebook) -> Result<(Vec<usize>, FeatureGrid)> {
    if grid.dim() != book.dim() {
        return Err(QuantizerError::DimensionMismatch(format!(
            "grid dim {} vs codebook dim {}",
            grid.dim(),
            book.dim()
        )));
    }
    let mut indices = Vec::with_capacity(grid.frames());
    let mut data = Vec::with_capacity(grid.data().len());
    for row in grid.rows() {
        let (i, _) = book.nearest(row)?;
        indices.push(i);
        data.extend_from_slice(book.projected_entry(i));
    }
    Ok((indices, FeatureGrid::new(data, grid.frames(), grid.dim())?))
}

/// Every intermediate of the residual chain, kept for gradient routing.
#[derive(Debug, Clone)]
pub struct EncodeTrace {
    pub indices: Vec<Vec<usize>>,
    /// `R_i`, full length.
    pub residual_inputs: Vec<FeatureGrid>,
    /// `D_i`, at the layer's own length.
    pub layer_inputs: Vec<FeatureGrid>,
    /// `Q_i`, at the layer's own length.
    pub quantized: Vec<FeatureGrid>,
    /// `U_i`, up-sampled to full length.
    pub upsampled: Vec<FeatureGrid>,
    pub final_residual: FeatureGrid,
}

fn check_books(latent: &FeatureGrid, cfg: &CodecConfig, books: &[Codebook]) -> Result<()> {
    cfg.validate()?;
    if latent.dim() != cfg.latent_dim {
        return Err(QuantizerError::ConfigMismatch(format!(
            "latent dim {} vs config {}",
            latent.dim(),
            cfg.latent_dim
        )));
    }
    if books.len() != cfg.layers() {
        return Err(QuantizerError::ConfigMismatch(format!("{} codebooks for {} layers", books.len(), cfg.layers())));
    }
    if let Some((i, b)) = books.iter().enumerate().find(|(_, b)| b.dim() != cfg.latent_dim) {
        return Err(QuantizerError::ConfigMismatch(format!("codebook {} projects to {} dims", i + 1, b.dim())));
    }
    if latent.frames() == 0 {
        return Err(QuantizerError::ConfigMismatch("no frames to encode".into()));
    }
    Ok(())
}

pub fn encode_trace(latent: &FeatureGrid, cfg: &CodecConfig, books: &[Codebook]) -> Result<EncodeTrace> {
    check_books(latent, cfg, books)?;
    let frames = latent.frames();
    let mut residual = latent.clone();
    let mut trace = EncodeTrace {
        indices: Vec::new(),
        residual_inputs: Vec::new(),
        layer_inputs: Vec::new(),
        quantized: Vec::new(),
        upsampled: Vec::new(),
        final_residual: FeatureGrid::zeros(0, cfg.latent_dim),
    };
    for (book, &k) in books.iter().zip(&cfg.vq_strides) {
        let input = downsample_frames(&residual, k)?;
        let (idx, q) = quantize_layer(&input, book)?;
        let up = upsample_frames(&q, frames)?;
        let next = residual.sub(&up)?;
        trace.residual_inputs.push(std::mem::replace(&mut residual, next));
        trace.indices.push(idx);
        trace.layer_inputs.push(input);
        trace.quantized.push(q);
        trace.upsampled.push(up);
    }
    trace.final_residual = residual;
    Ok(trace)
}

/// Returns the token streams and each layer's up-sampled contribution.
pub fn encode(
    latent: &FeatureGrid,
    cfg: &CodecConfig,
    books: &[Codebook],
) -> Result<(QuantizedAudio, Vec<FeatureGrid>)> {
    let trace = encode_trace(latent, cfg, books)?;
    let q = QuantizedAudio {
        layers: trace.indices,
        strides: cfg.vq_strides.clone(),
        frame_count: latent.frames(),
        config_digest: config_digest(cfg, books),
    };
    Ok((q, trace.upsampled))
}

/// Sum of the up-sampled looked-up entries of every present layer.
pub fn decode(q: &QuantizedAudio, cfg: &CodecConfig, books: &[Codebook]) -> Result<FeatureGrid> {
    let expected = config_digest(cfg, books);
    if q.config_digest != expected {
        return Err(QuantizerError::DigestMismatch { stream: q.config_digest, expected });
    }
    if q.layers.len() != cfg.layers() || q.strides != cfg.vq_strides {
        return Err(QuantizerError::LayerCountMismatch { expected: cfg.layers(), found: q.layers.len() });
    }
    if q.frame_count == 0 {
        return Err(QuantizerError::ConfigMismatch("stream has no frames".into()));
    }
    let lengths = cfg.layer_lengths(q.frame_count);
    let mut out = FeatureGrid::zeros(q.frame_count, cfg.latent_dim);
    for (layer, (indices, book)) in q.layers.iter().zip(books).enumerate() {
        if indices.is_empty() {
            continue;
        }
        if indices.len() != lengths[layer] {
            return Err(QuantizerError::LayerLengthMismatch {
                layer: layer + 1,
                found: indices.len(),
                expected: lengths[layer],
            });
        }
        let mut data = Vec::with_capacity(indices.len() * cfg.latent_dim);
        for &i in indices {
            if i >= book.len() {
                return Err(QuantizerError::IndexOutOfRange { layer: layer + 1, index: i, size: book.len() });
            }
            data.extend_from_slice(book.projected_entry(i));
        }
        let lookup = FeatureGrid::new(data, indices.len(), cfg.latent_dim)?;
        out = out.add(&upsample_frames(&lookup, q.frame_count)?)?;
    }
    Ok(out)
}

/// Labels space-joined within a layer, layers joined by `" <L> "`.
pub fn render_tokens(q: &QuantizedAudio, books: &[Codebook], selection: &LayerSelection) -> Result<String> {
    selection.check(q.layers.len().min(books.len()))?;
    let mut out = String::new();
    for (n, &layer) in selection.indices().iter().enumerate() {
        if n > 0 {
            out.push_str(LAYER_SEPARATOR);
        }
        let book = &books[layer];
        for (j, &i) in q.layers[layer].iter().enumerate() {
            let label = book.label(i).ok_or(QuantizerError::IndexOutOfRange {
                layer: layer + 1,
                index: i,
                size: book.len(),
            })?;
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{label}");
        }
    }
    Ok(out)
}

/// Inverse of [`render_tokens`]. Unselected layers come back empty; the frame
/// count is inferred from the finest selected layer.
pub fn parse_tokens(
    text: &str,
    books: &[Codebook],
    selection: &LayerSelection,
    cfg: &CodecConfig,
) -> Result<QuantizedAudio> {
    selection.check(cfg.layers().min(books.len()))?;
    let segments: Vec<&str> = text.split(LAYER_SEPARATOR).collect();
    if segments.len() != selection.indices().len() {
        return Err(QuantizerError::LayerCountMismatch { expected: selection.indices().len(), found: segments.len() });
    }
    let mut layers = vec![Vec::new(); cfg.layers()];
    for (segment, &layer) in segments.iter().zip(selection.indices()) {
        layers[layer] = segment
            .split_whitespace()
            .map(|w| books[layer].index_of(w).ok_or_else(|| QuantizerError::UnknownLabel(w.to_string())))
            .collect::<Result<_>>()?;
    }
    let frame_count = selection
        .indices()
        .iter()
        .map(|&l| (cfg.vq_strides[l], layers[l].len() * cfg.vq_strides[l]))
        .min_by_key(|&(k, _)| k)
        .map(|(_, t)| t)
        .unwrap_or(0);
    Ok(QuantizedAudio {
        layers,
        strides: cfg.vq_strides.clone(),
        frame_count,
        config_digest: config_digest(cfg, books),
    })
}
