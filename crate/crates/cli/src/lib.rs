//! Command implementations behind the `llmcodec` binary. Each command returns
//! an [`Outcome`] (human text plus a JSON value) or a [`CliError`] that maps
//! onto the process exit code.

pub mod commands;
pub mod config;
pub mod pipeline;

use llm_codec::codebook::CodebookError;
use llm_codec::icl::IclError;
use llm_codec::losses::LossError;
use llm_codec::nn::NnError;
use llm_codec::quantizer::QuantizerError;
use llm_codec::signal::SignalError;
use thiserror::Error;

pub use commands::*;
pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("asset error: {0}")]
    Asset(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("digest mismatch: {0}")]
    Digest(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("client error: {0}")]
    Client(String),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    /// 2 asset/config, 3 digest, 4 numeric, 5 client, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Asset(_) | CliError::Config(_) => 2,
            CliError::Digest(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Client(_) => 5,
            CliError::Invalid(_) => 1,
        }
    }
}

impl From<SignalError> for CliError {
    fn from(e: SignalError) -> Self {
        match e {
            SignalError::NotFound(_)
            | SignalError::UnsupportedFormat(_)
            | SignalError::CorruptHeader(_)
            | SignalError::Io(_) => CliError::Asset(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<CodebookError> for CliError {
    fn from(e: CodebookError) -> Self {
        CliError::Asset(e.to_string())
    }
}

impl From<QuantizerError> for CliError {
    fn from(e: QuantizerError) -> Self {
        match e {
            QuantizerError::DigestMismatch { .. } => CliError::Digest(e.to_string()),
            QuantizerError::Io(_) => CliError::Asset(e.to_string()),
            QuantizerError::Signal(s) => s.into(),
            QuantizerError::Codebook(c) => c.into(),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFiniteValue(_) => CliError::Numeric(e.to_string()),
            NnError::Checkpoint(_) | NnError::Io(_) => CliError::Asset(e.to_string()),
            NnError::Quantizer(q) => q.into(),
            NnError::Signal(s) => s.into(),
            NnError::Codebook(c) => c.into(),
            NnError::Loss(l) => l.into(),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<LossError> for CliError {
    fn from(e: LossError) -> Self {
        match e {
            LossError::NonFinitePart(_) => CliError::Numeric(e.to_string()),
            LossError::Io(_) | LossError::Guidance(_) => CliError::Asset(e.to_string()),
            LossError::Signal(s) => s.into(),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<IclError> for CliError {
    fn from(e: IclError) -> Self {
        match e {
            IclError::EpisodeFile(_) | IclError::Io(_) => CliError::Asset(e.to_string()),
            IclError::Timeout
            | IclError::HttpStatus(_)
            | IclError::MalformedResponse(_)
            | IclError::Transport(_)
            | IclError::MissingEnv(_)
            | IclError::Aborted { .. } => CliError::Client(e.to_string()),
            IclError::Quantizer(q) => q.into(),
            IclError::Nn(n) => n.into(),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

/// What a command reports: a human-readable text and the same facts as JSON.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub text: String,
    pub json: serde_json::Value,
}
