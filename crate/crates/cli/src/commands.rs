use std::path::{Path, PathBuf};

use llm_codec::codebook::Codebook;
use llm_codec::codebook::{build_word_codebook, load_embedding_table, load_word_list, save_codebook, TokenizerMap};
use llm_codec::icl::{
    load_episodes, run_generation, score_classification, CodecContext, CompletionClient, Episode, MockClient, TaskKind,
    DEFAULT_CONCURRENCY,
};
use llm_codec::losses::GuidanceInputs;
use llm_codec::nn::{load_checkpoint, save_checkpoint, train_step, Checkpoint, LossRecord, TrainState};
use llm_codec::quantizer::{config_digest, render_tokens, QuantizedAudio};
use llm_codec::signal::{load_wav, save_wav, snr_db, AudioBuffer};
use serde_json::json;

use crate::pipeline::{codebooks, fresh_state, guidance, load_clips, synthetic_clips, Codec};
use crate::{CliError, Outcome, RunConfig};

/// Builds the word codebook and writes it with its projected dimension.
pub fn cmd_build_codebook(
    words: &Path,
    tokmap: &Path,
    emb: &Path,
    out: &Path,
    projected_dim: usize,
) -> Result<Outcome, CliError> {
    let table = load_embedding_table(emb)?;
    let words = load_word_list(words)?;
    let tok = TokenizerMap::load(tokmap)?;
    tok.validate(table.len())?;
    let (book, report) = build_word_codebook(&words, &tok, &table)?;
    save_codebook(&book, projected_dim, out)?;
    Ok(Outcome {
        text: format!(
            "N={} excluded={} duplicates={}\nwrote {}",
            report.kept,
            report.excluded.len(),
            report.duplicates,
            out.display()
        ),
        json: json!({
            "n": report.kept,
            "excluded": report.excluded.len(),
            "excluded_words": report.excluded,
            "duplicates": report.duplicates,
            "out": out.display().to_string(),
        }),
    })
}

/// Options of [`cmd_train`] beyond the config file.
#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub data_dir: Option<PathBuf>,
    pub synthetic: bool,
    pub steps: Option<usize>,
    /// Continue from this checkpoint instead of a fresh initialization.
    pub resume: Option<PathBuf>,
}

/// History file: loss records plus the reconstruction SNR of the first clip.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HistoryFile {
    pub config_digest: String,
    pub seed: u64,
    pub steps: usize,
    /// SNR in dB of the first clip (cut to whole frames) through encode, quantize and decode.
    pub reference_snr_db: Option<f64>,
    pub history: Vec<LossRecord>,
}

/// Whole frames of `audio`, so the token stream covers every sample.
pub fn whole_frames(audio: &AudioBuffer, total: usize) -> Result<AudioBuffer, CliError> {
    let n = audio.len() / total * total;
    if n == 0 {
        return Err(CliError::Invalid(format!("clip shorter than one frame of {total} samples")));
    }
    Ok(AudioBuffer::new(audio.samples()[..n].to_vec(), audio.sample_rate())?)
}

/// SNR of `audio` after a full encode/decode pass.
pub fn round_trip_snr(codec: &Codec, audio: &AudioBuffer) -> Result<f64, CliError> {
    let clip = whole_frames(audio, codec.config.codec().total_downsample())?;
    let out = codec.decode(&codec.encode(&clip)?)?;
    Ok(snr_db(&clip, &out)?)
}

/// Runs `steps` optimizer steps; batches walk the clips in order, wrapping around.
pub fn run_steps(
    cfg: &RunConfig,
    clips: &[(String, AudioBuffer)],
    guide: &[GuidanceInputs],
    books: &mut [Codebook],
    state: &mut TrainState,
    steps: usize,
) -> Result<(), CliError> {
    let tc = cfg.train_config();
    let batch = cfg.train.batch_size;
    for _ in 0..steps {
        let start = state.step as usize * batch;
        let idx: Vec<usize> = (start..start + batch).map(|i| i % clips.len()).collect();
        let audio: Vec<AudioBuffer> = idx.iter().map(|&i| clips[i].1.clone()).collect();
        let gs: Vec<_> = idx.iter().map(|&i| guide[i].clone()).collect();
        train_step(&audio, state, books, &tc, &cfg.weights, Some(&gs)).map_err(|e| match CliError::from(e) {
            CliError::Numeric(m) => CliError::Numeric(format!("step {}: {m}", state.step + 1)),
            other => other,
        })?;
    }
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, args: &TrainArgs) -> Result<Outcome, CliError> {
    let steps = args.steps.unwrap_or(cfg.train.steps);
    let clips = match (&args.data_dir, args.synthetic) {
        (Some(_), true) => return Err(CliError::Config("--data-dir and --synthetic are exclusive".into())),
        (Some(dir), false) => load_clips(dir, cfg.codec().sample_rate)?,
        (None, true) => synthetic_clips(cfg),
        (None, false) => return Err(CliError::Config("give --data-dir or --synthetic".into())),
    };
    let guide = guidance(cfg, &clips)?;
    let mut books = codebooks(cfg)?;
    let mut state = fresh_state(cfg, &books)?;
    if let Some(ckpt) = &args.resume {
        state = load_checkpoint(ckpt)?.restore(state.model)?;
    }
    run_steps(cfg, &clips, &guide, &mut books, &mut state, steps)?;
    let codec = Codec::from_state(cfg, &state, books)?;
    let reference_snr_db = round_trip_snr(&codec, &clips[0].1).ok();
    let history = HistoryFile {
        config_digest: cfg.digest(),
        seed: cfg.train.seed,
        steps,
        reference_snr_db,
        history: state.history.clone(),
    };
    for p in [&cfg.train.checkpoint_path, &cfg.train.history_path] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Asset(format!("{}: {e}", dir.display())))?;
        }
    }
    save_checkpoint(&Checkpoint::from_state(&state), &cfg.train.checkpoint_path)?;
    let text = serde_json::to_string_pretty(&history).expect("history serializes");
    std::fs::write(&cfg.train.history_path, text + "\n").map_err(|e| CliError::Asset(e.to_string()))?;
    let first = history.history.first().map(|r| r.time);
    let last = history.history.last().map(|r| r.time);
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    Ok(Outcome {
        text: format!(
            "trained {steps} steps (seed {}, config {})\nrecon time L1: first {} last {}\nreference SNR: {} dB\ncheckpoint {}\nhistory {}",
            cfg.train.seed,
            history.config_digest,
            fmt(first),
            fmt(last),
            fmt(reference_snr_db),
            cfg.train.checkpoint_path.display(),
            cfg.train.history_path.display()
        ),
        json: json!({
            "config_digest": history.config_digest,
            "seed": cfg.train.seed,
            "steps": steps,
            "first_time_l1": first,
            "last_time_l1": last,
            "reference_snr_db": reference_snr_db,
            "checkpoint": cfg.train.checkpoint_path.display().to_string(),
            "history": cfg.train.history_path.display().to_string(),
        }),
    })
}

fn layer_counts(stream: &QuantizedAudio) -> Vec<usize> {
    stream.layers.iter().map(Vec::len).collect()
}

pub fn cmd_encode(cfg: &RunConfig, ckpt: &Path, input: &Path, out: &Path, layers: &str) -> Result<Outcome, CliError> {
    let codec = Codec::load(cfg, ckpt)?;
    let selection = codec.selection(layers)?;
    let audio = load_wav(input)?;
    let stream = codec.encode(&audio)?.restricted(&selection);
    stream.save(out)?;
    Ok(Outcome {
        text: format!(
            "{} frames, tokens per layer {:?}, {} total\nwrote {}",
            stream.frame_count,
            layer_counts(&stream),
            stream.total_tokens(),
            out.display()
        ),
        json: json!({
            "config_digest": cfg.digest(),
            "stream_digest": format!("{:016x}", stream.config_digest),
            "seed": cfg.train.seed,
            "frames": stream.frame_count,
            "tokens_per_layer": layer_counts(&stream),
            "total_tokens": stream.total_tokens(),
        }),
    })
}

fn check_digest(codec: &Codec, stream: &QuantizedAudio) -> Result<(), CliError> {
    let expected = config_digest(codec.config.codec(), &codec.books);
    if stream.config_digest != expected {
        return Err(CliError::Digest(format!(
            "stream was made with {:016x}, this config and checkpoint give {expected:016x}",
            stream.config_digest
        )));
    }
    Ok(())
}

fn load_stream(path: &Path) -> Result<QuantizedAudio, CliError> {
    QuantizedAudio::load(path).map_err(|e| match e {
        llm_codec::quantizer::QuantizerError::Io(_) => CliError::Asset(format!("{}: {e}", path.display())),
        other => CliError::Invalid(format!("{}: {other}", path.display())),
    })
}

pub fn cmd_decode(cfg: &RunConfig, ckpt: &Path, input: &Path, out: &Path, layers: &str) -> Result<Outcome, CliError> {
    let codec = Codec::load(cfg, ckpt)?;
    let selection = codec.selection(layers)?;
    let stream = load_stream(input)?;
    check_digest(&codec, &stream)?;
    let audio = codec.decode(&stream.restricted(&selection))?;
    save_wav(&audio, out)?;
    Ok(Outcome {
        text: format!("{} samples at {} Hz\nwrote {}", audio.len(), audio.sample_rate(), out.display()),
        json: json!({
            "config_digest": cfg.digest(),
            "seed": cfg.train.seed,
            "samples": audio.len(),
            "sample_rate": audio.sample_rate(),
        }),
    })
}

/// Prints each selected layer's words; with several layers each gets a `# layer N` header.
pub fn cmd_tokens(cfg: &RunConfig, ckpt: &Path, input: &Path, layers: &str) -> Result<Outcome, CliError> {
    let codec = Codec::load(cfg, ckpt)?;
    let selection = codec.selection(layers)?;
    let is_wav = input.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav"));
    let stream = if is_wav { codec.encode(&load_wav(input)?)? } else { load_stream(input)? };
    check_digest(&codec, &stream)?;
    let mut lines = Vec::new();
    let mut per_layer = Vec::new();
    for &layer in selection.indices() {
        let one = llm_codec::quantizer::LayerSelection::new(vec![layer])?;
        let words = render_tokens(&stream, &codec.books, &one)?;
        if selection.indices().len() > 1 {
            lines.push(format!("# layer {}", layer + 1));
        }
        lines.push(words.clone());
        per_layer.push(json!({"layer": layer + 1, "tokens": words}));
    }
    Ok(Outcome {
        text: lines.join("\n"),
        json: json!({"config_digest": cfg.digest(), "seed": cfg.train.seed, "layers": per_layer}),
    })
}

/// Which completion backend `icl` talks to.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientChoice {
    /// Nearest-demonstration mock, or a constant answer when given.
    Mock {
        constant: Option<String>,
    },
    Http,
}

#[derive(Debug, Clone)]
pub struct IclArgs {
    pub episodes: PathBuf,
    pub client: ClientChoice,
    pub report: PathBuf,
    pub concurrency: usize,
    /// Needed for generation episodes, which decode the completion to audio.
    pub codec: Option<(RunConfig, PathBuf)>,
    /// Where generated WAVs go; defaults to the report's directory.
    pub out_dir: Option<PathBuf>,
}

impl IclArgs {
    pub fn new(episodes: impl Into<PathBuf>, client: ClientChoice, report: impl Into<PathBuf>) -> Self {
        Self {
            episodes: episodes.into(),
            client,
            report: report.into(),
            concurrency: DEFAULT_CONCURRENCY,
            codec: None,
            out_dir: None,
        }
    }
}

fn make_client(choice: &ClientChoice) -> Result<Box<dyn CompletionClient>, CliError> {
    match choice {
        ClientChoice::Mock { constant: Some(text) } => Ok(Box::new(MockClient::Constant(text.clone()))),
        ClientChoice::Mock { constant: None } => Ok(Box::new(MockClient::NearestDemo)),
        ClientChoice::Http => http_client(),
    }
}

#[cfg(feature = "http")]
fn http_client() -> Result<Box<dyn CompletionClient>, CliError> {
    Ok(Box::new(llm_codec::icl::HttpClient::from_env()?))
}

#[cfg(not(feature = "http"))]
fn http_client() -> Result<Box<dyn CompletionClient>, CliError> {
    Err(CliError::Client("built without HTTP support".into()))
}

/// Scores classification episodes and synthesizes generation episodes; the
/// report is written even when the client fails part-way.
pub fn cmd_icl(args: &IclArgs) -> Result<Outcome, CliError> {
    let episodes = load_episodes(&args.episodes)?;
    let (classify, generate): (Vec<(usize, &Episode)>, Vec<(usize, &Episode)>) =
        episodes.iter().enumerate().partition(|(_, e)| e.task_kind == TaskKind::Classification);
    let client = make_client(&args.client)?;
    let (config_digest, seed) = match &args.codec {
        Some((cfg, _)) => (Some(cfg.digest()), Some(cfg.train.seed)),
        None => (None, None),
    };
    let mut report = json!({
        "config_digest": config_digest,
        "seed": seed,
        "client": match &args.client { ClientChoice::Http => "http", ClientChoice::Mock { .. } => "mock" },
        "episodes": episodes.len(),
    });
    let mut failure = None;
    let mut text = Vec::new();
    if !classify.is_empty() {
        let eps: Vec<Episode> = classify.iter().map(|(_, e)| (*e).clone()).collect();
        let scored = match score_classification(&eps, client.as_ref(), args.concurrency) {
            Ok(r) => r,
            Err(llm_codec::icl::IclError::Aborted { source, partial }) => {
                failure = Some(CliError::Client(source.to_string()));
                *partial
            }
            Err(e) => return Err(e.into()),
        };
        let mut results = serde_json::to_value(&scored.results).expect("results serialize");
        // report indices refer to the episode file, not the classification subset
        for r in results.as_array_mut().expect("array") {
            let i = r["index"].as_u64().expect("index") as usize;
            r["index"] = json!(classify[i].0);
        }
        text.push(format!("accuracy {:.4} ({}/{})", scored.accuracy, scored.correct, scored.total));
        report["classification"] =
            json!({"total": scored.total, "correct": scored.correct, "accuracy": scored.accuracy, "results": results});
    }
    if !generate.is_empty() && failure.is_none() {
        let (cfg, ckpt) = args
            .codec
            .as_ref()
            .ok_or_else(|| CliError::Config("generation episodes need --config and --ckpt".into()))?;
        let codec = Codec::load(cfg, ckpt)?;
        let ctx = CodecContext { config: cfg.codec().clone(), books: codec.books, model: codec.model };
        let dir = args.out_dir.clone().unwrap_or_else(|| args.report.parent().unwrap_or(Path::new(".")).to_path_buf());
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Asset(e.to_string()))?;
        let mut gens = Vec::new();
        for (i, ep) in generate {
            match run_generation(ep, client.as_ref(), &ctx) {
                Ok(audio) => {
                    let path = dir.join(format!("generation_{i:03}.wav"));
                    save_wav(&audio, &path)?;
                    gens.push(json!({"index": i, "wav": path.display().to_string(), "samples": audio.len()}));
                }
                Err(e) => {
                    let err = CliError::from(e);
                    if matches!(err, CliError::Client(_)) {
                        failure = Some(err);
                        break;
                    }
                    gens.push(json!({"index": i, "error": err.to_string()}));
                }
            }
        }
        text.push(format!(
            "{} generation episodes, {} synthesized",
            gens.len(),
            gens.iter().filter(|g| g.get("wav").is_some()).count()
        ));
        report["generation"] = json!(gens);
    }
    if let Some(e) = &failure {
        report["error"] = json!(e.to_string());
    }
    let body = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&args.report, body + "\n").map_err(|e| CliError::Asset(e.to_string()))?;
    match failure {
        Some(e) => Err(e),
        None => Ok(Outcome { text: text.join("\n"), json: report }),
    }
}
