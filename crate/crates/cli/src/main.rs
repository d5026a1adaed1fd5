use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use llmcodec_cli::{
    cmd_build_codebook, cmd_decode, cmd_encode, cmd_icl, cmd_tokens, cmd_train, CliError, ClientChoice, IclArgs,
    Outcome, RunConfig, TrainArgs,
};

#[derive(Parser)]
#[command(name = "llmcodec", version, about = "Audio tokens drawn from a language model's vocabulary")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClientKind {
    Mock,
    Http,
}

#[derive(Subcommand)]
enum Command {
    /// Build the word codebook from a word list, tokenizer map and embedding table.
    BuildCodebook {
        #[arg(long)]
        words: PathBuf,
        #[arg(long)]
        tokmap: PathBuf,
        #[arg(long)]
        emb: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Latent dimension the entries will be projected to.
        #[arg(long, default_value_t = 64)]
        projected_dim: usize,
    },
    /// Encode a WAV file into a token-stream JSON file.
    Encode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt: PathBuf,
        /// `all`, `semantic` or 1-based layer numbers such as `1,3`.
        #[arg(long, default_value = "all")]
        layers: String,
    },
    /// Decode a token-stream JSON file into a WAV file.
    Decode {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "all")]
        layers: String,
    },
    /// Train the codec and write a checkpoint plus loss history.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Train on the seeded multi-sine corpus.
        #[arg(long)]
        synthetic: bool,
        #[arg(long)]
        steps: Option<usize>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run few-shot episodes against a completion client and write a report.
    Icl {
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long, value_enum, default_value = "mock")]
        client: ClientKind,
        #[arg(long)]
        report: PathBuf,
        /// Make the mock answer this text every time.
        #[arg(long)]
        mock_answer: Option<String>,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        /// Config and checkpoint for decoding generation episodes.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Print the words of a token stream (or of an encoded WAV) per layer.
    Tokens {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "all")]
        layers: String,
    },
}

fn config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::BuildCodebook { words, tokmap, emb, out, projected_dim } => {
            cmd_build_codebook(&words, &tokmap, &emb, &out, projected_dim)
        }
        Command::Encode { input, out, config: c, ckpt, layers } => {
            cmd_encode(&config(c.as_deref())?, &ckpt, &input, &out, &layers)
        }
        Command::Decode { input, out, config: c, ckpt, layers } => {
            cmd_decode(&config(c.as_deref())?, &ckpt, &input, &out, &layers)
        }
        Command::Train { config: c, data_dir, synthetic, steps, resume } => {
            cmd_train(&config(c.as_deref())?, &TrainArgs { data_dir, synthetic, steps, resume })
        }
        Command::Icl { episodes, client, report, mock_answer, concurrency, config: c, ckpt, out_dir } => {
            let client = match client {
                ClientKind::Mock => ClientChoice::Mock { constant: mock_answer },
                ClientKind::Http => ClientChoice::Http,
            };
            let codec = match ckpt {
                Some(ckpt) => Some((config(c.as_deref())?, ckpt)),
                None => None,
            };
            let mut args = IclArgs::new(episodes, client, report);
            args.concurrency = concurrency;
            args.codec = codec;
            args.out_dir = out_dir;
            cmd_icl(&args)
        }
        Command::Tokens { input, config: c, ckpt, layers } => {
            cmd_tokens(&config(c.as_deref())?, &ckpt, &input, &layers)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(out) => {
            if json {
                println!("{}", out.json);
            } else if !out.text.is_empty() {
                println!("{}", out.text);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if json {
                println!("{}", serde_json::json!({"error": e.to_string(), "exit_code": e.exit_code()}));
            }
            eprintln!("llmcodec: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
