use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dahcrf_core::lda::LabelStrategy;

mod commands;
mod files;

#[derive(Parser)]
#[command(name = "dahcrf", version, about = "Dialogue-act tagging with topic-aware dual attention")]
struct Cli {
    /// Log progress (repeat for more detail). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Topic-model utilities for minting auxiliary topic labels.
    #[command(subcommand)]
    Topics(TopicsCommand),
    Train(TrainArgs),
    /// Score a checkpoint on a labelled corpus.
    Eval(EvalArgs),
    Predict(PredictArgs),
    /// Train a grid of variants over several seeds and tabulate accuracy.
    Ablate(AblateArgs),
}

#[derive(Subcommand)]
enum TopicsCommand {
    Fit(TopicsFitArgs),
    /// Fit one model per candidate K and report topic coherence.
    Select(TopicsSelectArgs),
    /// Write a copy of a corpus with topic labels filled in.
    Label(TopicsLabelArgs),
}

#[derive(Args)]
struct TopicCorpusArgs {
    /// Conversations in JSONL form, one per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Words to leave out of the topic vocabulary, one per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    /// Keep tokens exactly as stored (no lowercasing or re-splitting).
    #[arg(long)]
    raw: bool,
}

#[derive(Args)]
struct TopicsFitArgs {
    #[command(flatten)]
    input: TopicCorpusArgs,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    /// Document prior; defaults to 50/K.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct TopicsSelectArgs {
    #[command(flatten)]
    input: TopicCorpusArgs,
    /// Corpus for co-occurrence statistics; defaults to the training corpus.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Candidate topic counts, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = (1..=10).map(|i| i * 10).collect::<Vec<usize>>())]
    candidates: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    beta: f64,
    #[arg(long, default_value_t = 10)]
    top_n: usize,
    #[arg(long, default_value_t = 110)]
    window: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Coherence table (CSV); printed to stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TopicsLabelArgs {
    /// Topic model written by `topics fit`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_parser = parse_strategy, default_value = "utt")]
    strategy: LabelStrategy,
    #[arg(long, default_value_t = dahcrf_core::lda::DEFAULT_FOLD_IN_SWEEPS)]
    sweeps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    raw: bool,
    #[arg(long, short)]
    out: PathBuf,
}

fn parse_strategy(s: &str) -> Result<LabelStrategy, String> {
    s.parse().map_err(|e: dahcrf_core::Error| e.to_string())
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML file with model and training settings; unset keys keep defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: PathBuf,
    /// Also score the best model on this corpus.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long, short)]
    out: PathBuf,
    /// Training history and evaluation metrics (JSON).
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Metrics JSON; printed to stdout when omitted.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    confusion: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Predictions as JSONL; printed to stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Per-token attention weights as JSONL.
    #[arg(long)]
    attention: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Settings shared by every grid entry.
    #[command(flatten)]
    config: ConfigArgs,
    /// Grid entries as VARIANT or VARIANT+TOPIC_SOURCE, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "SAH,SAH-CRF,DAH+lda_utt,DAH-CRF-noDual+lda_utt,DAH-CRF+lda_utt"
    )]
    grid: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    seeds: Vec<u64>,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Comparison table (CSV); printed to stdout when omitted.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Per-run accuracies (CSV).
    #[arg(long)]
    runs: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
