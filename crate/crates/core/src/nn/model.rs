use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Binding, Graph, NnError, ParamStore, Result, Tensor, Var};
use crate::codebook::{Codebook, Projection};
use crate::quantizer::CodecConfig;
use crate::signal::{AudioBuffer, FeatureGrid};

/// Architecture sizes; every trainable tensor shape follows from these.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub codec: CodecConfig,
    /// Width of every convolution block.
    pub channels: usize,
    /// One discriminator per hop length, strictly increasing.
    pub disc_hops: Vec<usize>,
    pub disc_bands: usize,
    pub disc_channels: usize,
}

impl ModelConfig {
    pub fn desk() -> Self {
        Self { codec: CodecConfig::desk(), channels: 8, disc_hops: vec![64, 256], disc_bands: 16, disc_channels: 16 }
    }

    pub fn canonical() -> Self {
        Self {
            codec: CodecConfig::canonical(),
            channels: 32,
            disc_hops: vec![32, 64, 128, 256, 512, 1024],
            disc_bands: 16,
            disc_channels: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.codec.validate()?;
        if self.channels == 0 || self.disc_channels == 0 || self.disc_bands == 0 {
            return Err(NnError::InvalidConfig("channel and band counts must be positive".into()));
        }
        if self.disc_hops.is_empty() || self.disc_hops.windows(2).any(|w| w[0] >= w[1]) || self.disc_hops[0] == 0 {
            return Err(NnError::InvalidConfig("discriminator hops must be positive and strictly increasing".into()));
        }
        // n_fft = 4 * hop gives 2 * hop + 1 bins
        if self.disc_bands > 2 * self.disc_hops[0] + 1 {
            return Err(NnError::InvalidConfig(format!(
                "{} bands exceed the bins of hop {}",
                self.disc_bands, self.disc_hops[0]
            )));
        }
        Ok(())
    }
}

/// Encoder output plus the zero padding appended to reach a whole number of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedAudio {
    pub grid: FeatureGrid,
    pub pad: usize,
}

/// Strided-convolution encoder/decoder, spectrogram discriminators and the
/// trainable codebook projections, all stored in one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyCodecModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

const EDGE_KERNEL: usize = 7;

fn conv_param(rng: &mut ChaCha8Rng, store: &mut ParamStore, id: &str, shape: [usize; 3], fan_in: usize) {
    let bound = (3.0 / fan_in as f64).sqrt();
    let data = (0..shape.iter().product::<usize>()).map(|_| rng.gen_range(-bound..bound)).collect();
    let bias_len = if id.contains(".up") { shape[1] } else { shape[0] };
    store.insert(format!("{id}.weight"), Tensor::new(data, shape.to_vec()).expect("shape"));
    store.insert(format!("{id}.bias"), Tensor::zeros(&[bias_len]));
}

impl ToyCodecModel {
    /// Seeded initialization: uniform weights with variance `1 / fan_in`, zero biases,
    /// and one projection per codebook (entries become parameters only when unfrozen).
    pub fn init(config: ModelConfig, books: &[Codebook], seed: u64) -> Result<Self> {
        config.validate()?;
        let codec = &config.codec;
        if books.len() != codec.layers() {
            return Err(NnError::InvalidConfig(format!("{} codebooks for {} layers", books.len(), codec.layers())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let (c, d) = (config.channels, codec.latent_dim);
        conv_param(&mut rng, &mut p, "enc.conv_in", [c, 1, EDGE_KERNEL], EDGE_KERNEL);
        for (i, &s) in codec.encoder_strides.iter().enumerate() {
            conv_param(&mut rng, &mut p, &format!("enc.block{i}.res1"), [c, c, 3], 3 * c);
            conv_param(&mut rng, &mut p, &format!("enc.block{i}.res2"), [c, c, 3], 3 * c);
            conv_param(&mut rng, &mut p, &format!("enc.block{i}.down"), [c, c, 2 * s], 2 * s * c);
        }
        conv_param(&mut rng, &mut p, "enc.conv_out", [d, c, EDGE_KERNEL], EDGE_KERNEL * c);
        conv_param(&mut rng, &mut p, "dec.conv_in", [c, d, EDGE_KERNEL], EDGE_KERNEL * d);
        for (j, &s) in codec.encoder_strides.iter().rev().enumerate() {
            // a transposed convolution spreads each input over kernel/stride outputs
            conv_param(&mut rng, &mut p, &format!("dec.block{j}.up"), [c, c, 2 * s], 2 * c);
            conv_param(&mut rng, &mut p, &format!("dec.block{j}.res1"), [c, c, 3], 3 * c);
            conv_param(&mut rng, &mut p, &format!("dec.block{j}.res2"), [c, c, 3], 3 * c);
        }
        conv_param(&mut rng, &mut p, "dec.conv_out", [1, c, EDGE_KERNEL], EDGE_KERNEL * c);
        let (dc, feat) = (config.disc_channels, 2 * config.disc_bands);
        for k in 0..config.disc_hops.len() {
            conv_param(&mut rng, &mut p, &format!("disc{k}.conv1"), [dc, feat, 3], 3 * feat);
            conv_param(&mut rng, &mut p, &format!("disc{k}.conv2"), [dc, dc, 3], 3 * dc);
            conv_param(&mut rng, &mut p, &format!("disc{k}.conv3"), [1, dc, 3], 3 * dc);
        }
        for (i, book) in books.iter().enumerate() {
            let proj = Projection::random(book.entry_dim(), d, rng.gen());
            p.insert(format!("vq.l{i}.weight"), Tensor::from_rows(d, book.entry_dim(), proj.weight)?);
            p.insert(format!("vq.l{i}.bias"), Tensor::zeros(&[d]));
            if !book.is_frozen() {
                p.insert(
                    format!("vq.l{i}.entries"),
                    Tensor::from_rows(book.len(), book.entry_dim(), book.entries().to_vec())?,
                );
            }
        }
        Ok(Self { config, params: p })
    }

    pub fn total_downsample(&self) -> usize {
        self.config.codec.total_downsample()
    }

    /// Writes the trained projections (and unfrozen entries) into `books`.
    pub fn sync_books(&self, books: &mut [Codebook]) -> Result<()> {
        for (i, book) in books.iter_mut().enumerate() {
            let w = self.params.value(&format!("vq.l{i}.weight"))?;
            let b = self.params.value(&format!("vq.l{i}.bias"))?;
            let entry_id = format!("vq.l{i}.entries");
            if self.params.contains(&entry_id) && !book.is_frozen() {
                book.set_entries(self.params.value(&entry_id)?.data().to_vec())?;
            }
            book.set_projection(Projection {
                weight: w.data().to_vec(),
                bias: b.data().to_vec(),
                in_dim: w.dim(1),
                out_dim: w.dim(0),
            })?;
        }
        Ok(())
    }

    fn conv(
        &self,
        g: &mut Graph,
        b: &Binding,
        id: &str,
        x: Var,
        stride: usize,
        pad_l: usize,
        pad_r: usize,
    ) -> Result<Var> {
        let (w, bias) = (b.get(&format!("{id}.weight"))?, b.get(&format!("{id}.bias"))?);
        g.conv1d(x, w, bias, stride, pad_l, pad_r)
    }

    /// `x + conv2(tanh(conv1(x)))` with kernel-3 convolutions.
    fn residual(&self, g: &mut Graph, b: &Binding, id: &str, x: Var) -> Result<Var> {
        let h = self.conv(g, b, &format!("{id}.res1"), x, 1, 1, 1)?;
        let h = g.tanh(h);
        let h = self.conv(g, b, &format!("{id}.res2"), h, 1, 1, 1)?;
        g.add(x, h)
    }

    /// `[1, L]` waveform (L a multiple of the total down-sampling) to `[d, L / total]`.
    pub fn encode_graph(&self, g: &mut Graph, b: &Binding, x: Var) -> Result<Var> {
        let half = EDGE_KERNEL / 2;
        let mut h = self.conv(g, b, "enc.conv_in", x, 1, half, half)?;
        for (i, &s) in self.config.codec.encoder_strides.iter().enumerate() {
            let id = format!("enc.block{i}");
            h = self.residual(g, b, &id, h)?;
            // kernel 2s, stride s: padding s in total keeps exactly L / s outputs
            h = self.conv(g, b, &format!("{id}.down"), h, s, s.div_ceil(2), s / 2)?;
            h = g.tanh(h);
        }
        self.conv(g, b, "enc.conv_out", h, 1, half, half)
    }

    /// `[d, T]` latents to a `[1, T * total]` waveform in (-1, 1).
    pub fn decode_graph(&self, g: &mut Graph, b: &Binding, z: Var) -> Result<Var> {
        let half = EDGE_KERNEL / 2;
        let mut h = self.conv(g, b, "dec.conv_in", z, 1, half, half)?;
        for (j, &s) in self.config.codec.encoder_strides.iter().rev().enumerate() {
            let id = format!("dec.block{j}");
            h = g.tanh(h);
            let len = g.value(h).dim(1);
            let (w, bias) = (b.get(&format!("{id}.up.weight"))?, b.get(&format!("{id}.up.bias"))?);
            h = g.conv_transpose1d(h, w, bias, s, s.div_ceil(2), len * s)?;
            h = self.residual(g, b, &id, h)?;
        }
        h = g.tanh(h);
        let out = self.conv(g, b, "dec.conv_out", h, 1, half, half)?;
        Ok(g.tanh(out))
    }

    /// Zero-pads to a whole number of frames and returns the `[T, d]` latent grid.
    pub fn encoder_forward(&self, audio: &AudioBuffer) -> Result<EncodedAudio> {
        if audio.is_empty() {
            return Err(NnError::EmptyInput);
        }
        let total = self.total_downsample();
        let padded = audio.len().div_ceil(total) * total;
        let mut samples = audio.samples().to_vec();
        samples.resize(padded, 0.0);
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, &[]);
        let x = g.constant(Tensor::from_rows(1, padded, samples)?);
        let z = self.encode_graph(&mut g, &b, x)?;
        let zt = g.transpose(z)?;
        let v = g.value(zt);
        let grid = FeatureGrid::new(v.data().to_vec(), v.dim(0), v.dim(1))?;
        Ok(EncodedAudio { grid, pad: padded - audio.len() })
    }

    /// Synthesizes `T * total - pad` samples from a `[T, d]` grid.
    pub fn decoder_forward(&self, grid: &FeatureGrid, pad: usize) -> Result<AudioBuffer> {
        let d = self.config.codec.latent_dim;
        if grid.dim() != d {
            return Err(NnError::DimensionMismatch(format!("grid dim {} vs latent dim {d}", grid.dim())));
        }
        if grid.frames() == 0 {
            return Err(NnError::EmptyInput);
        }
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, &[]);
        let e = g.constant(Tensor::from_rows(grid.frames(), d, grid.data().to_vec())?);
        let z = g.transpose(e)?;
        let y = self.decode_graph(&mut g, &b, z)?;
        let mut samples = g.value(y).data().to_vec();
        if pad >= samples.len() {
            return Err(NnError::ShapeMismatch(format!("pad {pad} removes all {} samples", samples.len())));
        }
        samples.truncate(samples.len() - pad);
        Ok(AudioBuffer::new(samples, self.config.codec.sample_rate)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{build_subword_codebook, EmbeddingTable};

    pub(crate) fn desk_model(seed: u64) -> (ToyCodecModel, Vec<Codebook>) {
        let table = EmbeddingTable::synthetic(32, 16, 1);
        let book = build_subword_codebook(&table).unwrap();
        let mut books = vec![book.clone(), book.clone(), book];
        let model = ToyCodecModel::init(ModelConfig::desk(), &books, seed).unwrap();
        model.sync_books(&mut books).unwrap();
        (model, books)
    }

    fn zero_biases(model: &ToyCodecModel) -> bool {
        model.params.iter().filter(|p| p.id.ends_with(".bias")).all(|p| p.value.data().iter().all(|&v| v == 0.0))
    }

    #[test]
    fn encoder_shapes() {
        let (model, _) = desk_model(3);
        let one = model.encoder_forward(&AudioBuffer::new(vec![0.1; 480], 16000).unwrap()).unwrap();
        assert_eq!((one.grid.frames(), one.grid.dim(), one.pad), (1, 64, 0));
        let sec = model.encoder_forward(&AudioBuffer::new(vec![0.1; 16000], 16000).unwrap()).unwrap();
        assert_eq!((sec.grid.frames(), sec.pad), (34, 320));
        assert_eq!(sec.grid.truncated(16000 / 480).frames(), 33);
    }

    #[test]
    fn zero_input_gives_zero_grid_and_audio() {
        let (model, _) = desk_model(5);
        assert!(zero_biases(&model));
        let enc = model.encoder_forward(&AudioBuffer::new(vec![0.0; 960], 16000).unwrap()).unwrap();
        assert!(enc.grid.data().iter().all(|&v| v == 0.0));
        let audio = model.decoder_forward(&FeatureGrid::zeros(2, 64), 0).unwrap();
        assert_eq!(audio.len(), 960);
        assert!(audio.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn decoder_lengths() {
        let (model, _) = desk_model(7);
        assert_eq!(model.decoder_forward(&FeatureGrid::zeros(1, 64), 0).unwrap().len(), 480);
        let x = AudioBuffer::new((0..1440).map(|i| (i as f64 * 0.02).sin() * 0.5).collect(), 16000).unwrap();
        let enc = model.encoder_forward(&x).unwrap();
        assert_eq!(model.decoder_forward(&enc.grid, enc.pad).unwrap().len(), 1440);
        let odd = AudioBuffer::new(vec![0.2; 1000], 16000).unwrap();
        let enc = model.encoder_forward(&odd).unwrap();
        assert_eq!(model.decoder_forward(&enc.grid, enc.pad).unwrap().len(), 1000);
        assert!(matches!(model.decoder_forward(&FeatureGrid::zeros(1, 8), 0), Err(NnError::DimensionMismatch(_))));
        assert!(matches!(model.encoder_forward(&AudioBuffer::new(vec![], 16000).unwrap()), Err(NnError::EmptyInput)));
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(desk_model(11).0, desk_model(11).0);
        assert_ne!(desk_model(11).0, desk_model(12).0);
    }
}
