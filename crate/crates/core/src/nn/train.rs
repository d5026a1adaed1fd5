use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::disc::discriminator_forward;
use super::vq::quantization_loss;
use super::{
    adam_step, vq_bridge, AdamHyper, AdamState, Binding, Graph, NnError, Result, Tensor, ToyCodecModel, Var, VqOutputs,
};
use crate::codebook::{standard_normal, Codebook};
use crate::losses::{
    consistency_loss_with_grad, disc_hinge_loss_with_grad, feature_match_loss_with_grad, gen_adv_loss_with_grad,
    recon_freq_l1_with_grad, recon_time_l1_with_grad, semantic_loss_with_grad, total_generator_loss,
    DiscriminatorOutputs, GuidanceInputs, LossTerm, LossWeights,
};
use crate::signal::{stft_magnitude, subband_split, AudioBuffer, FeatureGrid, SpectrogramConfig, WindowKind};

const GENERATOR: [&str; 3] = ["enc.", "dec.", "vq."];
const DISCRIMINATOR: [&str; 1] = ["disc"];

/// Every loss component of one step, averaged over the batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub time: f64,
    pub freq: f64,
    pub adv: f64,
    pub feat: f64,
    pub sem: f64,
    pub cons: f64,
    pub commit: f64,
    pub disc: f64,
    pub total: f64,
}

impl LossRecord {
    fn part(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::Time => self.time,
            LossTerm::Freq => self.freq,
            LossTerm::Adv => self.adv,
            LossTerm::Feat => self.feat,
            LossTerm::Sem => self.sem,
            LossTerm::Cons => self.cons,
            LossTerm::Commit => self.commit,
        }
    }

    fn part_mut(&mut self, term: LossTerm) -> &mut f64 {
        match term {
            LossTerm::Time => &mut self.time,
            LossTerm::Freq => &mut self.freq,
            LossTerm::Adv => &mut self.adv,
            LossTerm::Feat => &mut self.feat,
            LossTerm::Sem => &mut self.sem,
            LossTerm::Cons => &mut self.cons,
            LossTerm::Commit => &mut self.commit,
        }
    }
}

/// Everything that changes during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub model: ToyCodecModel,
    pub adam: AdamState,
    pub seed: u64,
    pub history: Vec<LossRecord>,
}

impl TrainState {
    pub fn new(model: ToyCodecModel, seed: u64) -> Self {
        let adam = AdamState::zeros_like(&model.params);
        Self { step: 0, model, adam, seed, history: Vec::new() }
    }
}

/// Optimizer and reconstruction-spectrogram settings.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainConfig {
    pub adam: AdamHyper,
    pub spectrogram: SpectrogramConfig,
}

struct Forward {
    graph: Graph,
    binding: Binding,
    vq: VqOutputs,
    x_hat: Var,
    frames: usize,
}

fn audio_tensor(samples: &[f64]) -> Tensor {
    Tensor::from_rows(1, samples.len(), samples.to_vec()).expect("shape")
}

fn outputs_of(g: &Graph, logits: &[Var], features: &[Vec<Var>]) -> DiscriminatorOutputs {
    DiscriminatorOutputs {
        logits: logits.iter().map(|&v| g.value(v).data().to_vec()).collect(),
        features: features.iter().map(|l| l.iter().map(|&v| g.value(v).data().to_vec()).collect()).collect(),
    }
}

fn run_discriminators(g: &mut Graph, b: &Binding, model: &ToyCodecModel, x: Var) -> Result<(Vec<Var>, Vec<Vec<Var>>)> {
    let mut logits = Vec::new();
    let mut features = Vec::new();
    for k in 0..model.config.disc_hops.len() {
        let out = discriminator_forward(g, b, &model.config, k, x)?;
        logits.push(out.logits);
        features.push(out.features);
    }
    Ok((logits, features))
}

fn generator_forward(model: &ToyCodecModel, books: &[Codebook], audio: &AudioBuffer) -> Result<Forward> {
    let total = model.total_downsample();
    let len = audio.len();
    let padded = len.div_ceil(total) * total;
    let mut g = Graph::new();
    let binding = model.params.bind_matching(&mut g, &GENERATOR, true);
    let x = g.constant(audio_tensor(audio.samples()));
    let x = g.pad_cols(x, padded - len)?;
    let z = model.encode_graph(&mut g, &binding, x)?;
    let e = g.transpose(z)?;
    let frames = g.value(e).dim(0);
    if !g.value(e).is_finite() {
        return Err(NnError::NonFiniteValue("latent".into()));
    }
    let vq = vq_bridge(&mut g, e, &model.config.codec, books, &binding)?;
    let z_hat = g.transpose(vq.e_hat)?;
    let y = model.decode_graph(&mut g, &binding, z_hat)?;
    let x_hat = g.slice_cols(y, 0, len)?;
    if !g.value(x_hat).is_finite() {
        return Err(NnError::NonFiniteValue("reconstruction".into()));
    }
    Ok(Forward { graph: g, binding, vq, x_hat, frames })
}

fn grid_of(t: &Tensor) -> Result<FeatureGrid> {
    Ok(FeatureGrid::new(t.data().to_vec(), t.dim(0), t.dim(1))?)
}

fn tensor_of(grid: &FeatureGrid) -> Tensor {
    Tensor::from_rows(grid.frames(), grid.dim(), grid.data().to_vec()).expect("shape")
}

fn check_finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(NnError::NonFiniteValue(what.into()))
    }
}

/// One discriminator update on the detached reconstructions, then one
/// generator update on the weighted total. The state is left untouched when
/// any loss or updated parameter is non-finite.
///
/// With both adversarial weights at zero the discriminators receive no
/// gradient, so every parameter then moves only through weight decay.
pub fn train_step(
    batch: &[AudioBuffer],
    state: &mut TrainState,
    books: &mut [Codebook],
    cfg: &TrainConfig,
    weights: &LossWeights,
    guidance: Option<&[GuidanceInputs]>,
) -> Result<LossRecord> {
    if batch.is_empty() {
        return Err(NnError::EmptyInput);
    }
    weights.validate()?;
    if let Some(gs) = guidance {
        if gs.len() != batch.len() {
            return Err(NnError::InvalidConfig(format!("{} guidance entries for {} clips", gs.len(), batch.len())));
        }
    } else if weights.w_sem > 0.0 || weights.w_cons > 0.0 {
        return Err(NnError::InvalidConfig("semantic and consistency terms need guidance".into()));
    }
    let mut next = state.clone();
    let t = next.step + 1;
    let scale = 1.0 / batch.len() as f64;
    next.model.sync_books(books)?;
    next.model.params.zero_grads();

    let mut forwards = Vec::with_capacity(batch.len());
    for audio in batch {
        forwards.push(generator_forward(&next.model, books, audio)?);
    }

    let train_disc = weights.w_adv > 0.0 || weights.w_feat > 0.0;
    let mut record = LossRecord {
        step: t,
        time: 0.0,
        freq: 0.0,
        adv: 0.0,
        feat: 0.0,
        sem: 0.0,
        cons: 0.0,
        commit: 0.0,
        disc: 0.0,
        total: 0.0,
    };
    for (audio, fw) in batch.iter().zip(&forwards) {
        let mut g = Graph::new();
        let b = next.model.params.bind_matching(&mut g, &DISCRIMINATOR, true);
        let real = g.constant(audio_tensor(audio.samples()));
        let fake = g.constant(fw.graph.value(fw.x_hat).clone());
        let (real_logits, _) = run_discriminators(&mut g, &b, &next.model, real)?;
        let (fake_logits, _) = run_discriminators(&mut g, &b, &next.model, fake)?;
        let (value, gr, gf) =
            disc_hinge_loss_with_grad(&outputs_of(&g, &real_logits, &[]), &outputs_of(&g, &fake_logits, &[]))?;
        check_finite("discriminator loss", value)?;
        record.disc += value * scale;
        if train_disc {
            let parents: Vec<Var> = real_logits.iter().chain(&fake_logits).copied().collect();
            let grads = gr
                .into_iter()
                .chain(gf)
                .zip(&parents)
                .map(|(d, &v)| Tensor::new(d, g.value(v).shape().to_vec()))
                .collect::<Result<Vec<_>>>()?;
            let loss = g.scalar_with_grads(&parents, value, grads);
            let grads = g.backward(loss)?;
            next.model.params.accumulate(&g, &b, &grads, scale);
        }
    }
    adam_step(&mut next.model.params, &mut next.adam, &cfg.adam, t, &DISCRIMINATOR)?;

    for (i, (audio, mut fw)) in batch.iter().zip(forwards).enumerate() {
        let g = &mut fw.graph;
        let disc = next.model.params.bind_matching(g, &DISCRIMINATOR, false);
        let real = g.constant(audio_tensor(audio.samples()));
        let (_, real_feats) = run_discriminators(g, &disc, &next.model, real)?;
        let (fake_logits, fake_feats) = run_discriminators(g, &disc, &next.model, fw.x_hat)?;
        let x_hat = AudioBuffer::new(g.value(fw.x_hat).data().to_vec(), audio.sample_rate())?;
        let shape = g.value(fw.x_hat).shape().to_vec();
        let mut terms: Vec<(LossTerm, Var)> = Vec::new();

        let (v, d) = recon_time_l1_with_grad(audio, &x_hat)?;
        terms.push((LossTerm::Time, g.scalar_with_grads(&[fw.x_hat], v, vec![Tensor::new(d, shape.clone())?])));
        let (v, d) = recon_freq_l1_with_grad(audio, &x_hat, &cfg.spectrogram)?;
        terms.push((LossTerm::Freq, g.scalar_with_grads(&[fw.x_hat], v, vec![Tensor::new(d, shape)?])));

        let fake_out = outputs_of(g, &fake_logits, &fake_feats);
        let (v, d) = gen_adv_loss_with_grad(&fake_out)?;
        let grads = d
            .into_iter()
            .zip(&fake_logits)
            .map(|(d, &l)| Tensor::new(d, g.value(l).shape().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        terms.push((LossTerm::Adv, g.scalar_with_grads(&fake_logits, v, grads)));
        let real_out = outputs_of(g, &[], &real_feats);
        let (v, d) = feature_match_loss_with_grad(&real_out.features, &fake_out.features)?;
        let flat: Vec<Var> = fake_feats.concat();
        let grads = d
            .into_iter()
            .flatten()
            .zip(&flat)
            .map(|(d, &l)| Tensor::new(d, g.value(l).shape().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        terms.push((LossTerm::Feat, g.scalar_with_grads(&flat, v, grads)));

        if let Some(gs) = guidance {
            let e1 = g.interp_rows(fw.vq.straight_through[0], fw.frames)?;
            let (v, d) = semantic_loss_with_grad(&grid_of(g.value(e1))?, &gs[i].g)?;
            terms.push((LossTerm::Sem, g.scalar_with_grads(&[e1], v, vec![tensor_of(&d)])));
            // a single-layer quantizer has no second layer; its own output stands in
            let e2 = fw.vq.straight_through[1.min(fw.vq.straight_through.len() - 1)];
            let (v, d) = consistency_loss_with_grad(&grid_of(g.value(e2))?, &gs[i].w)?;
            terms.push((LossTerm::Cons, g.scalar_with_grads(&[e2], v, vec![tensor_of(&d)])));
        }
        terms.push((LossTerm::Commit, quantization_loss(g, &fw.vq)?));

        for &(term, v) in &terms {
            let value = g.value(v).item();
            check_finite(&format!("{term:?} loss"), value)?;
            *record.part_mut(term) += value * scale;
        }
        let weighted: Vec<(Var, f64)> = terms.iter().map(|&(term, v)| (v, weights.get(term))).collect();
        let total = g.weighted_sum(&weighted)?;
        let grads = g.backward(total)?;
        next.model.params.accumulate(g, &fw.binding, &grads, scale);
    }
    adam_step(&mut next.model.params, &mut next.adam, &cfg.adam, t, &GENERATOR)?;

    let parts = LossTerm::ALL.iter().map(|&term| (term, record.part(term))).collect();
    record.total = total_generator_loss(weights, &parts)?;
    if !next.model.params.all_finite() {
        return Err(NnError::NonFiniteValue("parameters after update".into()));
    }
    next.model.params.zero_grads();
    next.model.sync_books(books)?;
    next.step = t;
    next.history.push(record.clone());
    *state = next;
    Ok(record)
}

/// Deterministic stand-in for external semantic targets: band-pooled log
/// spectra (one frame per `hop` samples) through a fixed random projection to
/// `dim`, squashed by tanh. `g` is the time mean of the frame targets.
pub fn synthetic_guidance(audio: &AudioBuffer, dim: usize, hop: usize, seed: u64) -> Result<GuidanceInputs> {
    const BANDS: usize = 16;
    let spec =
        SpectrogramConfig { n_fft: (2 * hop).next_power_of_two(), hop, window: WindowKind::Hann, band_count: BANDS };
    let mag = stft_magnitude(audio, &spec)?;
    let scale = 2.0 / spec.n_fft as f64;
    let bands = subband_split(&mag, BANDS)?;
    let frames = mag.frames();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj: Vec<f64> = (0..BANDS * dim).map(|_| standard_normal(&mut rng) / (BANDS as f64).sqrt()).collect();
    let mut w = Vec::with_capacity(frames * dim);
    for t in 0..frames {
        // log magnitudes span roughly [-7, 0]; centre them on 0
        let feats: Vec<f64> = bands.iter().map(|b| ((mean(b.row(t)) * scale + 1e-3).ln() + 3.5) / 3.5).collect();
        w.extend((0..dim).map(|j| (0..BANDS).map(|k| proj[k * dim + j] * feats[k]).sum::<f64>().tanh()));
    }
    let w = FeatureGrid::new(w, frames, dim)?;
    let mut g = vec![0.0; dim];
    for row in w.rows() {
        g.iter_mut().zip(row).for_each(|(a, b)| *a += b / frames as f64);
    }
    Ok(GuidanceInputs::new(g, w)?)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
