//! Few-shot episodes, prompt rendering, completion clients and scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::Hasher;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::Codebook;
use crate::nn::{NnError, ToyCodecModel};
use crate::quantizer::{decode, parse_tokens, CodecConfig, LayerSelection, QuantizerError};
use crate::signal::AudioBuffer;

/// Record separator between prompt blocks.
pub const SEPARATOR: &str = "###";
pub const DEFAULT_MAX_TOKENS: u32 = 16;
pub const DEFAULT_CONCURRENCY: usize = 4;

#[derive(Debug, Error)]
pub enum IclError {
    #[error("episode has no demonstrations")]
    EmptyDemonstrations,
    #[error("demonstration output {0:?} is not in the label set")]
    LabelNotInSet(String),
    #[error("episode kind does not match the prompt builder")]
    WrongTaskKind,
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("completion holds no tokens")]
    EmptyCompletion,
    #[error("request timed out")]
    Timeout,
    #[error("server answered with HTTP status {0}")]
    HttpStatus(u16),
    #[error("malformed completion response: {0}")]
    MalformedResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("missing environment variable {0}")]
    MissingEnv(&'static str),
    #[error("episode file: {0}")]
    EpisodeFile(String),
    #[error("scoring aborted after {} of {} episodes: {source}", partial.results.len(), partial.total)]
    Aborted { source: Box<IclError>, partial: Box<ClassificationReport> },
    #[error(transparent)]
    Quantizer(#[from] QuantizerError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, IclError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Generation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub input: String,
    pub output: String,
}

impl Demonstration {
    pub fn new(input: impl Into<String>, output: impl Into<String>) -> Self {
        Self { input: input.into(), output: output.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub task_kind: TaskKind,
    /// Task-description line; omitted from the prompt when absent.
    #[serde(default)]
    pub induction: Option<String>,
    #[serde(default)]
    pub label_set: Vec<String>,
    pub demonstrations: Vec<Demonstration>,
    /// Extra copies of the demonstration block.
    #[serde(default)]
    pub repeats: usize,
    pub query: String,
    /// Expected label, used for scoring.
    #[serde(default)]
    pub answer: Option<String>,
    /// Which quantizer layers the token texts were rendered from ("all", "semantic", "1,3").
    #[serde(default)]
    pub layer_selection: Option<String>,
}

/// `For each of the following input-output pairs, the output is one of ['A' or 'B']`.
pub fn classification_induction(labels: &[String]) -> String {
    let quoted: Vec<String> = labels.iter().map(|l| format!("'{l}'")).collect();
    format!("For each of the following input-output pairs, the output is one of [{}]", quoted.join(" or "))
}

fn push_demos(out: &mut String, demos: &[Demonstration], repeats: usize) {
    for _ in 0..=repeats {
        for d in demos {
            out.push_str(&format!("{SEPARATOR}\nInput: {}\nOutput: {}\n", d.input, d.output));
        }
    }
}

fn push_query(out: &mut String, query: &str) {
    out.push_str(&format!("{SEPARATOR}\nInput: {query}\nOutput:"));
}

/// Label membership ignores case, so a set rendered `['Happy' or 'Sad']` accepts output `happy`.
fn label_index(labels: &[String], text: &str) -> Option<usize> {
    labels.iter().position(|l| l.to_lowercase() == text.to_lowercase())
}

pub fn build_classification_prompt(ep: &Episode) -> Result<String> {
    if ep.task_kind != TaskKind::Classification {
        return Err(IclError::WrongTaskKind);
    }
    if ep.demonstrations.is_empty() {
        return Err(IclError::EmptyDemonstrations);
    }
    if let Some(d) = ep.demonstrations.iter().find(|d| label_index(&ep.label_set, &d.output).is_none()) {
        return Err(IclError::LabelNotInSet(d.output.clone()));
    }
    let mut out = String::new();
    if let Some(line) = &ep.induction {
        out.push_str(line);
        out.push('\n');
    }
    push_demos(&mut out, &ep.demonstrations, ep.repeats);
    push_query(&mut out, &ep.query);
    Ok(out)
}

pub fn build_generation_prompt(ep: &Episode) -> Result<String> {
    if ep.task_kind != TaskKind::Generation {
        return Err(IclError::WrongTaskKind);
    }
    if ep.demonstrations.is_empty() {
        return Err(IclError::EmptyDemonstrations);
    }
    let mut out = String::new();
    if let Some(line) = &ep.induction {
        out.push_str(&format!("Instruction: {line}\n"));
    }
    push_demos(&mut out, &ep.demonstrations, ep.repeats);
    push_query(&mut out, &ep.query);
    Ok(out)
}

pub fn build_prompt(ep: &Episode) -> Result<String> {
    match ep.task_kind {
        TaskKind::Classification => build_classification_prompt(ep),
        TaskKind::Generation => build_generation_prompt(ep),
    }
}

/// 64-bit FNV-1a of the prompt bytes, as 16 hex digits.
pub fn prompt_hash(prompt: &str) -> String {
    let mut h = FnvHasher::default();
    h.write(prompt.as_bytes());
    format!("{:016x}", h.finish())
}

pub fn load_episodes(path: impl AsRef<Path>) -> Result<Vec<Episode>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| IclError::EpisodeFile(e.to_string()))
}

pub fn save_episodes(episodes: &[Episode], path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(episodes).map_err(|e| IclError::EpisodeFile(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
}

impl CompletionRequest {
    /// Greedy request for at most [`DEFAULT_MAX_TOKENS`] tokens.
    pub fn new(prompt: impl Into<String>) -> Self {
        Self { prompt: prompt.into(), max_tokens: DEFAULT_MAX_TOKENS }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    pub text: String,
    pub finish_reason: Option<String>,
}

/// Anything that continues a prompt greedily.
pub trait CompletionClient: Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse>;
}

pub fn lm_complete(client: &dyn CompletionClient, req: &CompletionRequest) -> Result<CompletionResponse> {
    if req.prompt.is_empty() {
        return Err(IclError::EmptyPrompt);
    }
    client.complete(req)
}

/// Offline stand-ins for a language model.
#[derive(Debug, Clone, PartialEq)]
pub enum MockClient {
    /// Always answers the same text.
    Constant(String),
    /// Answers by exact prompt lookup; unknown prompts get an empty completion.
    Table(BTreeMap<String, String>),
    /// Echoes the output of the demonstration whose input shares the most
    /// whitespace-separated tokens with the query (lowest index on ties).
    NearestDemo,
}

/// Splits a rendered prompt into its `(input, output)` demonstrations and the query.
pub fn parse_prompt(prompt: &str) -> (Vec<(String, String)>, Option<String>) {
    let mut demos = Vec::new();
    let mut query = None;
    for block in prompt.split(&format!("{SEPARATOR}\n")).skip(1) {
        let Some(rest) = block.strip_prefix("Input: ") else { continue };
        let Some((input, output)) = rest.split_once("\nOutput:") else { continue };
        let output = output.strip_prefix(' ').unwrap_or(output);
        match output.strip_suffix('\n') {
            Some(o) => demos.push((input.to_string(), o.to_string())),
            None => query = Some(input.to_string()),
        }
    }
    (demos, query)
}

impl CompletionClient for MockClient {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse> {
        let text = match self {
            MockClient::Constant(t) => t.clone(),
            MockClient::Table(map) => map.get(&req.prompt).cloned().unwrap_or_default(),
            MockClient::NearestDemo => {
                let (demos, query) = parse_prompt(&req.prompt);
                let query = query.unwrap_or_default();
                let q: BTreeSet<&str> = query.split_whitespace().collect();
                let mut best: Option<(usize, &str)> = None;
                for (input, output) in &demos {
                    let overlap = input.split_whitespace().collect::<BTreeSet<_>>().intersection(&q).count();
                    if best.is_none_or(|(b, _)| overlap > b) {
                        best = Some((overlap, output));
                    }
                }
                best.map(|b| b.1.to_string()).unwrap_or_default()
            }
        };
        Ok(CompletionResponse { text, finish_reason: Some("stop".into()) })
    }
}

#[cfg(feature = "http")]
pub use http::HttpClient;

#[cfg(feature = "http")]
mod http {
    use std::time::Duration;

    use serde_json::{json, Value};

    use super::{CompletionClient, CompletionRequest, CompletionResponse, IclError, Result};

    pub const URL_ENV: &str = "LLMCODEC_LM_URL";
    pub const KEY_ENV: &str = "LLMCODEC_LM_KEY";

    /// OpenAI-style `/v1/completions` client.
    #[derive(Debug, Clone)]
    pub struct HttpClient {
        pub base_url: String,
        pub api_key: Option<String>,
        pub model: String,
        pub timeout: Duration,
        /// Extra attempts after a timeout, transport error, 429 or 5xx.
        pub retries: u32,
        pub backoff: Duration,
    }

    impl HttpClient {
        pub fn new(base_url: impl Into<String>) -> Self {
            Self {
                base_url: base_url.into(),
                api_key: None,
                model: "default".into(),
                timeout: Duration::from_secs(60),
                retries: 3,
                backoff: Duration::from_millis(500),
            }
        }

        /// Reads the base URL and optional bearer token from the environment.
        pub fn from_env() -> Result<Self> {
            let url = std::env::var(URL_ENV).map_err(|_| IclError::MissingEnv(URL_ENV))?;
            let mut c = Self::new(url);
            c.api_key = std::env::var(KEY_ENV).ok();
            Ok(c)
        }

        fn attempt(&self, req: &CompletionRequest) -> Result<CompletionResponse> {
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .timeout_global(Some(self.timeout))
                .http_status_as_error(false)
                .build()
                .into();
            let url = format!("{}/v1/completions", self.base_url.trim_end_matches('/'));
            let body = json!({
                "model": self.model,
                "prompt": req.prompt,
                "max_tokens": req.max_tokens,
                "temperature": 0,
            });
            let mut builder = agent.post(&url).content_type("application/json");
            if let Some(key) = &self.api_key {
                builder = builder.header("Authorization", format!("Bearer {key}"));
            }
            let mut resp = builder.send(body.to_string()).map_err(map_error)?;
            let status = resp.status().as_u16();
            if status != 200 {
                return Err(IclError::HttpStatus(status));
            }
            let text = resp.body_mut().read_to_string().map_err(map_error)?;
            let v: Value = serde_json::from_str(&text).map_err(|e| IclError::MalformedResponse(e.to_string()))?;
            let choice = &v["choices"][0];
            let completion =
                choice["text"].as_str().ok_or_else(|| IclError::MalformedResponse("missing choices[0].text".into()))?;
            Ok(CompletionResponse {
                text: completion.to_string(),
                finish_reason: choice["finish_reason"].as_str().map(str::to_string),
            })
        }
    }

    fn map_error(e: ureq::Error) -> IclError {
        match e {
            ureq::Error::Timeout(_) => IclError::Timeout,
            ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => IclError::Timeout,
            other => IclError::Transport(other.to_string()),
        }
    }

    fn retryable(e: &IclError) -> bool {
        match e {
            IclError::Timeout | IclError::Transport(_) => true,
            IclError::HttpStatus(code) => *code == 429 || *code >= 500,
            _ => false,
        }
    }

    impl CompletionClient for HttpClient {
        fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse> {
            let mut attempt = 0;
            loop {
                match self.attempt(req) {
                    Err(e) if retryable(&e) && attempt < self.retries => {
                        std::thread::sleep(self.backoff * 2u32.pow(attempt));
                        attempt += 1;
                    }
                    other => return other,
                }
            }
        }
    }
}

#[cfg(feature = "http")]
pub use http::{KEY_ENV, URL_ENV};

/// First label (in set order) that the normalized completion starts with,
/// otherwise the first one it contains.
pub fn extract_label(completion: &str, labels: &[String]) -> Option<String> {
    let norm = completion.trim().to_lowercase();
    let lower: Vec<String> = labels.iter().map(|l| l.to_lowercase()).collect();
    lower
        .iter()
        .position(|l| !l.is_empty() && norm.starts_with(l.as_str()))
        .or_else(|| lower.iter().position(|l| !l.is_empty() && norm.contains(l.as_str())))
        .map(|i| labels[i].clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub index: usize,
    pub prompt_hash: String,
    pub completion: String,
    pub prediction: Option<String>,
    pub answer: Option<String>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Completed episodes in episode order.
    pub results: Vec<EpisodeResult>,
}

fn score_one(index: usize, ep: &Episode, client: &dyn CompletionClient) -> Result<EpisodeResult> {
    let prompt = build_classification_prompt(ep)?;
    let completion = lm_complete(client, &CompletionRequest::new(prompt.clone()))?.text;
    let prediction = extract_label(&completion, &ep.label_set);
    let correct = match (&prediction, &ep.answer) {
        (Some(p), Some(a)) => p.to_lowercase() == a.to_lowercase(),
        _ => false,
    };
    Ok(EpisodeResult {
        index,
        prompt_hash: prompt_hash(&prompt),
        completion,
        prediction,
        answer: ep.answer.clone(),
        correct,
    })
}

/// Scores episodes with at most `concurrency` requests in flight. The first
/// error stops new requests and is returned with the episodes finished so far.
pub fn score_classification(
    episodes: &[Episode],
    client: &dyn CompletionClient,
    concurrency: usize,
) -> Result<ClassificationReport> {
    if episodes.is_empty() {
        return Err(IclError::EmptyDemonstrations);
    }
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<Result<EpisodeResult>>>> = Mutex::new((0..episodes.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..concurrency.clamp(1, episodes.len()) {
            s.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= episodes.len() {
                    break;
                }
                let r = score_one(i, &episodes[i], client);
                if r.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                slots.lock().expect("no poisoned scorer")[i] = Some(r);
            });
        }
    });
    let mut results = Vec::new();
    let mut error = None;
    for slot in slots.into_inner().expect("no poisoned scorer").into_iter().flatten() {
        match slot {
            Ok(r) => results.push(r),
            Err(e) => {
                error.get_or_insert(e);
            }
        }
    }
    let correct = results.iter().filter(|r| r.correct).count();
    let report = ClassificationReport {
        total: episodes.len(),
        correct,
        accuracy: correct as f64 / episodes.len() as f64,
        results,
    };
    match error {
        Some(e) => Err(IclError::Aborted { source: Box::new(e), partial: Box::new(report) }),
        None => Ok(report),
    }
}

/// Trained codec pieces needed to turn token text back into audio.
#[derive(Debug, Clone)]
pub struct CodecContext {
    pub config: CodecConfig,
    pub books: Vec<Codebook>,
    pub model: ToyCodecModel,
}

/// Completion text up to the first record separator.
pub fn completion_tokens(completion: &str) -> &str {
    completion.split(SEPARATOR).next().unwrap_or("").trim()
}

/// Prompts for a token sequence and synthesizes it.
pub fn run_generation(ep: &Episode, client: &dyn CompletionClient, codec: &CodecContext) -> Result<AudioBuffer> {
    let prompt = build_generation_prompt(ep)?;
    let completion = lm_complete(client, &CompletionRequest::new(prompt))?.text;
    decode_completion(completion_tokens(&completion), ep, codec)
}

fn decode_completion(text: &str, ep: &Episode, codec: &CodecContext) -> Result<AudioBuffer> {
    if text.is_empty() {
        return Err(IclError::EmptyCompletion);
    }
    let selection = match &ep.layer_selection {
        Some(s) => LayerSelection::parse(s, codec.config.layers())?,
        None => LayerSelection::all(codec.config.layers()),
    };
    let stream = parse_tokens(text, &codec.books, &selection, &codec.config)?;
    let grid = decode(&stream, &codec.config, &codec.books)?;
    Ok(codec.model.decoder_forward(&grid, 0)?)
}

/// Decodes a demonstration's token text the same way [`run_generation`] decodes a completion.
pub fn decode_token_text(text: &str, ep: &Episode, codec: &CodecContext) -> Result<AudioBuffer> {
    decode_completion(completion_tokens(text), ep, codec)
}

/// Balanced 2-way 1-shot episodes whose classes draw tokens from disjoint
/// halves of `book`. Every sequence uses all labels of its half in a random
/// order, so same-class sequences always overlap and cross-class ones never do.
pub fn separable_episodes(book: &Codebook, count: usize, seed: u64) -> Vec<Episode> {
    let half = book.len() / 2;
    let ranges = [0..half, half..2 * half];
    let names = ["alpha".to_string(), "beta".to_string()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sequence = |class: usize, rng: &mut ChaCha8Rng| {
        let mut labels: Vec<&str> = book.labels()[ranges[class].clone()].iter().map(String::as_str).collect();
        labels.shuffle(rng);
        labels.join(" ")
    };
    (0..count)
        .map(|i| {
            let target = i % 2;
            let mut order = [0usize, 1];
            if rng.gen_bool(0.5) {
                order.swap(0, 1);
            }
            let demonstrations =
                order.iter().map(|&c| Demonstration::new(sequence(c, &mut rng), names[c].clone())).collect();
            Episode {
                task_kind: TaskKind::Classification,
                induction: Some(classification_induction(&names)),
                label_set: names.to_vec(),
                demonstrations,
                repeats: 0,
                query: sequence(target, &mut rng),
                answer: Some(names[target].clone()),
                layer_selection: Some("semantic".into()),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emotion(repeats: usize, induction: bool) -> Episode {
        let labels = vec!["Happy".to_string(), "Sad".to_string()];
        Episode {
            task_kind: TaskKind::Classification,
            induction: induction.then(|| classification_induction(&labels)),
            label_set: labels,
            demonstrations: vec![Demonstration::new("a b c", "happy"), Demonstration::new("d e f", "sad")],
            repeats,
            query: "a b x".into(),
            answer: Some("happy".into()),
            layer_selection: None,
        }
    }

    #[test]
    fn classification_template() {
        let p = build_classification_prompt(&emotion(0, true)).unwrap();
        assert_eq!(
            p,
            "For each of the following input-output pairs, the output is one of ['Happy' or 'Sad']\n\
             ###\nInput: a b c\nOutput: happy\n###\nInput: d e f\nOutput: sad\n###\nInput: a b x\nOutput:"
        );
        assert!(build_classification_prompt(&emotion(0, false)).unwrap().starts_with("###\nInput: a b c"));
    }

    #[test]
    fn repeats_copy_the_block() {
        for r in 0..4 {
            let p = build_classification_prompt(&emotion(r, false)).unwrap();
            assert_eq!(p.matches("Output: happy\n").count(), r + 1);
            assert_eq!(p.matches(SEPARATOR).count(), 2 * (r + 1) + 1);
            assert!(p.ends_with("###\nInput: a b x\nOutput:"));
        }
    }

    #[test]
    fn classification_errors() {
        let mut ep = emotion(0, true);
        ep.demonstrations[1].output = "angry".into();
        assert!(matches!(build_classification_prompt(&ep), Err(IclError::LabelNotInSet(l)) if l == "angry"));
        ep.demonstrations.clear();
        assert!(matches!(build_classification_prompt(&ep), Err(IclError::EmptyDemonstrations)));
        ep.task_kind = TaskKind::Generation;
        assert!(matches!(build_classification_prompt(&ep), Err(IclError::WrongTaskKind)));
    }

    #[test]
    fn generation_template() {
        let ep = Episode {
            task_kind: TaskKind::Generation,
            induction: Some("Count".into()),
            label_set: vec![],
            demonstrations: vec![Demonstration::new("an audio of 1", "x y")],
            repeats: 0,
            query: "an audio of 2".into(),
            answer: None,
            layer_selection: None,
        };
        let p = build_generation_prompt(&ep).unwrap();
        assert_eq!(p, "Instruction: Count\n###\nInput: an audio of 1\nOutput: x y\n###\nInput: an audio of 2\nOutput:");
        assert_eq!(p.matches(SEPARATOR).count(), 2);
    }

    #[test]
    fn prompt_parsing_round_trip() {
        let p = build_classification_prompt(&emotion(1, true)).unwrap();
        let (demos, query) = parse_prompt(&p);
        assert_eq!(demos.len(), 4);
        assert_eq!(demos[1], ("d e f".to_string(), "sad".to_string()));
        assert_eq!(query.as_deref(), Some("a b x"));
    }

    #[test]
    fn nearest_demo_mock() {
        let req = CompletionRequest::new(build_classification_prompt(&emotion(0, true)).unwrap());
        assert_eq!(MockClient::NearestDemo.complete(&req).unwrap().text, "happy");
        let mut ep = emotion(0, true);
        ep.query = "q r s".into();
        // no overlap anywhere: lowest index wins
        let req = CompletionRequest::new(build_classification_prompt(&ep).unwrap());
        assert_eq!(MockClient::NearestDemo.complete(&req).unwrap().text, "happy");
        assert!(matches!(
            lm_complete(&MockClient::NearestDemo, &CompletionRequest::new("")),
            Err(IclError::EmptyPrompt)
        ));
    }

    #[test]
    fn label_extraction() {
        let labels = vec!["happy".to_string(), "sad".to_string()];
        assert_eq!(extract_label("Happy\n###", &labels).as_deref(), Some("happy"));
        assert_eq!(extract_label("I think sad", &labels).as_deref(), Some("sad"));
        assert_eq!(extract_label(" sad but happy", &labels).as_deref(), Some("sad"));
        assert_eq!(extract_label("neither", &labels), None);
    }

    #[test]
    fn separable_oracle_and_constant_baseline() {
        let labels: Vec<String> = (0..16).map(|i| format!("w{i}")).collect();
        let book = Codebook::new(labels, (0..32).map(f64::from).collect(), 2).unwrap();
        let eps = separable_episodes(&book, 50, 4);
        let report = score_classification(&eps, &MockClient::NearestDemo, 4).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.results.len(), 50);
        let constant = score_classification(&eps, &MockClient::Constant("alpha".into()), 3).unwrap();
        assert_eq!(constant.accuracy, 0.5);
    }

    struct Failing;

    impl CompletionClient for Failing {
        fn complete(&self, _: &CompletionRequest) -> Result<CompletionResponse> {
            Err(IclError::HttpStatus(503))
        }
    }

    #[test]
    fn client_errors_abort_with_partial_report() {
        let eps = vec![emotion(0, true); 3];
        match score_classification(&eps, &Failing, 1) {
            Err(IclError::Aborted { source, partial }) => {
                assert!(matches!(*source, IclError::HttpStatus(503)));
                assert_eq!(partial.total, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn episodes_serialize() {
        let eps = vec![emotion(1, true)];
        let text = serde_json::to_string(&eps).unwrap();
        let back: Vec<Episode> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, eps);
        let minimal: Episode = serde_json::from_str(
            r#"{"task_kind":"generation","demonstrations":[{"input":"a","output":"b"}],"query":"c"}"#,
        )
        .unwrap();
        assert_eq!(minimal.repeats, 0);
        assert_eq!(completion_tokens(" a b ###\nInput"), "a b");
    }
}
