//! Assembles codebooks, model and training data from a [`RunConfig`].

use std::path::{Path, PathBuf};

use llm_codec::codebook::{
    build_subword_codebook, build_word_codebook, decode_codebook, encode_codebook, load_codebook, load_embedding_table,
    load_word_list, synthetic_words, Codebook, EmbeddingTable, TokenizerMap,
};
use llm_codec::losses::GuidanceInputs;
use llm_codec::nn::{load_checkpoint, synthetic_guidance, ToyCodecModel, TrainState};
use llm_codec::quantizer::{decode, encode, LayerSelection, QuantizedAudio};
use llm_codec::signal::{load_wav, AudioBuffer};
use llm_codec::synth::synthetic_corpus;

use crate::{CliError, RunConfig};

/// Vocabulary size and dimension of the stand-in embedding table.
pub const SYNTHETIC_VOCAB: usize = 256;
pub const SYNTHETIC_EMBED_DIM: usize = 64;
pub const SYNTHETIC_WORDS: usize = 200;
pub const SYNTHETIC_CLIPS: usize = 32;

/// Seed offset so guidance projections differ from model initialization.
const GUIDANCE_SEED: u64 = 0x9e37;

fn vocabulary(cfg: &RunConfig) -> Result<(EmbeddingTable, Codebook), CliError> {
    let a = &cfg.assets;
    let seed = cfg.train.seed;
    let table = match &a.embedding_table {
        Some(p) => load_embedding_table(p)?,
        None => EmbeddingTable::synthetic(SYNTHETIC_VOCAB, SYNTHETIC_EMBED_DIM, seed),
    };
    let word_book = if let Some(p) = &a.word_codebook {
        let (book, dim) = load_codebook(p)?;
        if dim != cfg.codec().latent_dim {
            return Err(CliError::Config(format!(
                "word codebook projects to {dim}, config latent_dim is {}",
                cfg.codec().latent_dim
            )));
        }
        book
    } else {
        let (words, tok) = match (&a.word_list, &a.tokenizer_map) {
            (Some(w), Some(t)) => (load_word_list(w)?, TokenizerMap::load(t)?),
            _ => synthetic_words(&table, SYNTHETIC_WORDS, seed),
        };
        let (book, _) = build_word_codebook(&words, &tok, &table)?;
        // stored entries are f32; round now so digests match a reloaded file
        decode_codebook(&encode_codebook(&book, cfg.codec().latent_dim))?.0
    };
    Ok((table, word_book))
}

/// Word codebook on the first layer, the sub-word vocabulary on the rest.
pub fn codebooks(cfg: &RunConfig) -> Result<Vec<Codebook>, CliError> {
    let (table, word_book) = vocabulary(cfg)?;
    let sub = build_subword_codebook(&table)?;
    let mut books = vec![word_book];
    books.extend(std::iter::repeat_n(sub, cfg.codec().layers() - 1));
    Ok(books)
}

pub fn fresh_state(cfg: &RunConfig, books: &[Codebook]) -> Result<TrainState, CliError> {
    let model = ToyCodecModel::init(cfg.model.clone(), books, cfg.train.seed)?;
    Ok(TrainState::new(model, cfg.train.seed))
}

/// Trained model plus the codebooks carrying its projections.
#[derive(Debug, Clone)]
pub struct Codec {
    pub config: RunConfig,
    pub books: Vec<Codebook>,
    pub model: ToyCodecModel,
}

impl Codec {
    pub fn load(cfg: &RunConfig, ckpt: &Path) -> Result<Self, CliError> {
        let mut books = codebooks(cfg)?;
        let template = fresh_state(cfg, &books)?.model;
        let state = load_checkpoint(ckpt)?.restore(template)?;
        state.model.sync_books(&mut books)?;
        Ok(Self { config: cfg.clone(), books, model: state.model })
    }

    pub fn from_state(cfg: &RunConfig, state: &TrainState, mut books: Vec<Codebook>) -> Result<Self, CliError> {
        state.model.sync_books(&mut books)?;
        Ok(Self { config: cfg.clone(), books, model: state.model.clone() })
    }

    pub fn encode(&self, audio: &AudioBuffer) -> Result<QuantizedAudio, CliError> {
        let sr = self.config.codec().sample_rate;
        if audio.sample_rate() != sr {
            return Err(CliError::Invalid(format!("input is {} Hz, config expects {sr} Hz", audio.sample_rate())));
        }
        // the padded tail frame is dropped: T = floor(len / total), at least one
        let frames = (audio.len() / self.config.codec().total_downsample()).max(1);
        let latent = self.model.encoder_forward(audio)?.grid.truncated(frames);
        Ok(encode(&latent, self.config.codec(), &self.books)?.0)
    }

    /// Synthesizes `frame_count * total_downsample` samples from the present layers.
    pub fn decode(&self, stream: &QuantizedAudio) -> Result<AudioBuffer, CliError> {
        let grid = decode(stream, self.config.codec(), &self.books)?;
        Ok(self.model.decoder_forward(&grid, 0)?)
    }

    pub fn selection(&self, layers: &str) -> Result<LayerSelection, CliError> {
        Ok(LayerSelection::parse(layers, self.config.codec().layers())?)
    }
}

/// Training clips with their names; WAVs sorted by file name.
pub fn load_clips(dir: &Path, sample_rate: u32) -> Result<Vec<(String, AudioBuffer)>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Asset(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Asset(format!("no .wav files in {}", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let audio = load_wav(&p)?;
            if audio.sample_rate() != sample_rate {
                return Err(CliError::Asset(format!(
                    "{} is {} Hz, expected {sample_rate}",
                    p.display(),
                    audio.sample_rate()
                )));
            }
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok((stem, audio))
        })
        .collect()
}

/// The seeded multi-sine corpus: one-second clips.
pub fn synthetic_clips(cfg: &RunConfig) -> Vec<(String, AudioBuffer)> {
    let sr = cfg.codec().sample_rate;
    synthetic_corpus(SYNTHETIC_CLIPS, sr as usize, sr, cfg.train.seed)
        .into_iter()
        .enumerate()
        .map(|(i, a)| (format!("synth{i:03}"), a))
        .collect()
}

/// Guidance files from `guidance_dir` when configured, otherwise derived from the audio itself.
pub fn guidance(cfg: &RunConfig, clips: &[(String, AudioBuffer)]) -> Result<Vec<GuidanceInputs>, CliError> {
    let codec = cfg.codec();
    clips
        .iter()
        .map(|(stem, audio)| match &cfg.assets.guidance_dir {
            Some(dir) => Ok(GuidanceInputs::load(dir.join(format!("{stem}.json")), dir.join(format!("{stem}.lcgw")))?),
            None => Ok(synthetic_guidance(
                audio,
                codec.latent_dim,
                codec.total_downsample(),
                cfg.train.seed ^ GUIDANCE_SEED,
            )?),
        })
        .collect()
}
