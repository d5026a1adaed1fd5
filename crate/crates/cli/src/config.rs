//! Flat `key = value` run configuration. Blank lines and `#` comments are
//! ignored; relative paths resolve against the config file's directory.
//!
//! Every key is optional. Without asset paths the vocabulary is a seeded
//! synthetic embedding table.

use std::collections::BTreeMap;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use llm_codec::losses::LossWeights;
use llm_codec::nn::{AdamHyper, ModelConfig, TrainConfig};
use llm_codec::quantizer::CodecConfig;
use llm_codec::signal::{SpectrogramConfig, WindowKind};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub checkpoint_path: PathBuf,
    pub history_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssetPaths {
    pub embedding_table: Option<PathBuf>,
    pub word_list: Option<PathBuf>,
    pub tokenizer_map: Option<PathBuf>,
    /// Prebuilt word codebook; replaces word list and tokenizer map.
    pub word_codebook: Option<PathBuf>,
    /// Holds `<stem>.json` global targets and `<stem>.lcgw` grids per training clip.
    pub guidance_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub spectro: SpectrogramConfig,
    pub weights: LossWeights,
    pub train: TrainSettings,
    pub assets: AssetPaths,
}

/// Keys accepted in a config file, in the order [`RunConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "sample_rate",
    "encoder_strides",
    "latent_dim",
    "vq_strides",
    "channels",
    "disc_hops",
    "disc_bands",
    "disc_channels",
    "n_fft",
    "hop",
    "window",
    "bands",
    "w_time",
    "w_freq",
    "w_adv",
    "w_feat",
    "w_sem",
    "w_cons",
    "w_commit",
    "steps",
    "batch_size",
    "seed",
    "lr",
    "weight_decay",
    "checkpoint_path",
    "history_path",
    "embedding_table",
    "word_list",
    "tokenizer_map",
    "word_codebook",
    "guidance_dir",
];

impl Default for RunConfig {
    /// Desk-scale model, 300 steps of batch 4 at lr 3e-3.
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            spectro: SpectrogramConfig::default(),
            weights: LossWeights::default(),
            train: TrainSettings {
                steps: 300,
                batch_size: 4,
                seed: 1,
                lr: 3e-3,
                weight_decay: AdamHyper::default().weight_decay,
                checkpoint_path: PathBuf::from("model.lckp"),
                history_path: PathBuf::from("history.json"),
            },
            assets: AssetPaths::default(),
        }
    }
}

fn list(key: &str, v: &str) -> Result<Vec<usize>, CliError> {
    v.split(',').map(|s| number(key, s)).collect()
}

fn number<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.trim().parse().map_err(|_| CliError::Config(format!("{key}: cannot parse '{v}'")))
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        cfg.train.checkpoint_path = base.join(&cfg.train.checkpoint_path);
        cfg.train.history_path = base.join(&cfg.train.history_path);
        let mut seen = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.insert(key.to_string(), n + 1).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key {key}", n + 1)));
            }
            cfg.set(key, value, base)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Asset(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn set(&mut self, key: &str, v: &str, base: &Path) -> Result<(), CliError> {
        let path = || Some(base.join(v));
        let codec = &mut self.model.codec;
        match key {
            "sample_rate" => codec.sample_rate = number(key, v)?,
            "encoder_strides" => codec.encoder_strides = list(key, v)?,
            "latent_dim" => codec.latent_dim = number(key, v)?,
            "vq_strides" => codec.vq_strides = list(key, v)?,
            "channels" => self.model.channels = number(key, v)?,
            "disc_hops" => self.model.disc_hops = list(key, v)?,
            "disc_bands" => self.model.disc_bands = number(key, v)?,
            "disc_channels" => self.model.disc_channels = number(key, v)?,
            "n_fft" => self.spectro.n_fft = number(key, v)?,
            "hop" => self.spectro.hop = number(key, v)?,
            "window" => self.spectro.window = v.parse::<WindowKind>().map_err(|e| CliError::Config(e.to_string()))?,
            "bands" => self.spectro.band_count = number(key, v)?,
            "w_time" => self.weights.w_time = number(key, v)?,
            "w_freq" => self.weights.w_freq = number(key, v)?,
            "w_adv" => self.weights.w_adv = number(key, v)?,
            "w_feat" => self.weights.w_feat = number(key, v)?,
            "w_sem" => self.weights.w_sem = number(key, v)?,
            "w_cons" => self.weights.w_cons = number(key, v)?,
            "w_commit" => self.weights.w_commit = number(key, v)?,
            "steps" => self.train.steps = number(key, v)?,
            "batch_size" => self.train.batch_size = number(key, v)?,
            "seed" => self.train.seed = number(key, v)?,
            "lr" => self.train.lr = number(key, v)?,
            "weight_decay" => self.train.weight_decay = number(key, v)?,
            "checkpoint_path" => self.train.checkpoint_path = base.join(v),
            "history_path" => self.train.history_path = base.join(v),
            "embedding_table" => self.assets.embedding_table = path(),
            "word_list" => self.assets.word_list = path(),
            "tokenizer_map" => self.assets.tokenizer_map = path(),
            "word_codebook" => self.assets.word_codebook = path(),
            "guidance_dir" => self.assets.guidance_dir = path(),
            other => return Err(CliError::Config(format!("unknown key {other}"))),
        }
        Ok(())
    }

    /// Checks numeric ranges and that every referenced input path exists.
    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.spectro.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.weights.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.train.batch_size == 0 {
            return Err(CliError::Config("batch_size must be positive".into()));
        }
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
            return Err(CliError::Config("lr must be positive".into()));
        }
        let a = &self.assets;
        for p in [&a.embedding_table, &a.word_list, &a.tokenizer_map, &a.word_codebook, &a.guidance_dir]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(CliError::Asset(format!("{} does not exist", p.display())));
            }
        }
        let word_assets = a.word_list.is_some() as u8 + a.tokenizer_map.is_some() as u8;
        if word_assets == 1 {
            return Err(CliError::Config("word_list and tokenizer_map go together".into()));
        }
        if (word_assets == 2 || a.word_codebook.is_some()) && a.embedding_table.is_none() {
            return Err(CliError::Config("word assets need embedding_table for the sub-word layers".into()));
        }
        Ok(())
    }

    /// Canonical `key = value` text covering every key, paths included.
    pub fn to_text(&self) -> String {
        let c = &self.model.codec;
        let w = &self.weights;
        let t = &self.train;
        let window = match self.spectro.window {
            WindowKind::Hann => "hann",
            WindowKind::Rectangular => "rectangular",
        };
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let values: Vec<(&str, Option<String>)> = vec![
            ("sample_rate", Some(c.sample_rate.to_string())),
            ("encoder_strides", Some(join(&c.encoder_strides))),
            ("latent_dim", Some(c.latent_dim.to_string())),
            ("vq_strides", Some(join(&c.vq_strides))),
            ("channels", Some(self.model.channels.to_string())),
            ("disc_hops", Some(join(&self.model.disc_hops))),
            ("disc_bands", Some(self.model.disc_bands.to_string())),
            ("disc_channels", Some(self.model.disc_channels.to_string())),
            ("n_fft", Some(self.spectro.n_fft.to_string())),
            ("hop", Some(self.spectro.hop.to_string())),
            ("window", Some(window.to_string())),
            ("bands", Some(self.spectro.band_count.to_string())),
            ("w_time", Some(w.w_time.to_string())),
            ("w_freq", Some(w.w_freq.to_string())),
            ("w_adv", Some(w.w_adv.to_string())),
            ("w_feat", Some(w.w_feat.to_string())),
            ("w_sem", Some(w.w_sem.to_string())),
            ("w_cons", Some(w.w_cons.to_string())),
            ("w_commit", Some(w.w_commit.to_string())),
            ("steps", Some(t.steps.to_string())),
            ("batch_size", Some(t.batch_size.to_string())),
            ("seed", Some(t.seed.to_string())),
            ("lr", Some(t.lr.to_string())),
            ("weight_decay", Some(t.weight_decay.to_string())),
            ("checkpoint_path", Some(t.checkpoint_path.display().to_string())),
            ("history_path", Some(t.history_path.display().to_string())),
            ("embedding_table", opt(&self.assets.embedding_table)),
            ("word_list", opt(&self.assets.word_list)),
            ("tokenizer_map", opt(&self.assets.tokenizer_map)),
            ("word_codebook", opt(&self.assets.word_codebook)),
            ("guidance_dir", opt(&self.assets.guidance_dir)),
        ];
        values.into_iter().filter_map(|(k, v)| v.map(|v| format!("{k} = {v}\n"))).collect()
    }

    /// FNV-1a of the settings that shape the model and its training run;
    /// output locations are left out so a moved run keeps its digest.
    pub fn digest(&self) -> String {
        let mut h = FnvHasher::default();
        for line in self.to_text().lines() {
            if !line.starts_with("checkpoint_path") && !line.starts_with("history_path") {
                h.write(line.as_bytes());
                h.write(b"\n");
            }
        }
        format!("{:016x}", h.finish())
    }

    pub fn codec(&self) -> &CodecConfig {
        &self.model.codec
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            adam: AdamHyper { lr: self.train.lr, weight_decay: self.train.weight_decay, ..AdamHyper::default() },
            spectrogram: self.spectro,
        }
    }
}
