use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use unifilter::error::ErrorClass;
use unifilter::io::ReadMode;
use unifilter::{Error, Precision};

mod commands;
mod corpus;
mod manifest;

#[derive(Debug, Parser)]
#[command(name = "unifilter", version, about = "Quality scoring and curation for image-text corpora")]
struct Cli {
    /// Worker threads; UNIFILTER_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Fail on the first malformed input line instead of skipping it.
    #[arg(long, global = true)]
    strict: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled multi-level training set.
    Gen(GenArgs),
    /// Cluster records by image embedding and sample per cluster.
    Cluster(ClusterArgs),
    /// Train the quality classifier.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled set.
    Eval(EvalArgs),
    /// Score a corpus with a checkpoint.
    Score(ScoreArgs),
    /// Keep the top-scoring fraction of a corpus.
    Filter(FilterArgs),
    /// Drop document images that match none of their paragraphs.
    DfnFilter(DfnArgs),
    /// Tokenize and pack a corpus into fixed-length sequences.
    Pack(PackArgs),
    /// Corpus statistics.
    Stats(StatsArgs),
    /// Scoring throughput benchmark.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Samples per quality level for each modality.
    #[arg(long)]
    pub levels_count: Option<usize>,
    /// Use the built-in deterministic generator (default).
    #[arg(long, conflicts_with = "generator_config")]
    pub mock: bool,
    /// Remote generator settings (JSON).
    #[arg(long)]
    pub generator_config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Caption samples added as positives.
    #[arg(long)]
    pub nonsyn_positives: Option<PathBuf>,
    /// Mock image side in pixels.
    #[arg(long)]
    pub image_side: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// Corpus, labeled set, or `{id, embedding}` rows.
    #[arg(long)]
    pub embeddings_from: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub per_cluster: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub emit_centroids: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_checkpoint: PathBuf,
    /// Peak learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub precision: Option<Precision>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long, default_value = "eval.json")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "scores.jsonl")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Retained fraction for both modalities.
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long, default_value_t = 0.30)]
    pub caption_fraction: f64,
    #[arg(long, default_value_t = 0.15)]
    pub interleaved_fraction: f64,
    #[arg(long, default_value = "filtered.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DfnArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.15, allow_negative_numbers = true)]
    pub threshold: f64,
    #[arg(long, default_value = "filtered.jsonl")]
    pub out: PathBuf,
    /// Image encoder settings (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PackArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 4096)]
    pub context_len: usize,
    /// Vocabulary file; created from the input with --build-vocab.
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub build_vocab: bool,
    #[arg(long, default_value_t = 144)]
    pub tokens_per_image: usize,
    /// Also put an end-of-chunk marker before caption images.
    #[arg(long)]
    pub caption_end_of_chunk: bool,
    #[arg(long, default_value = "packed.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "stats.json")]
    pub out: PathBuf,
    /// Tokens counted per image in the average document length.
    #[arg(long, default_value_t = 144)]
    pub image_token_equiv: usize,
    /// Unfiltered corpus; sets the retained fraction.
    #[arg(long, conflicts_with = "retained_fraction")]
    pub original: Option<PathBuf>,
    #[arg(long)]
    pub retained_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "64,128")]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,8")]
    pub batches: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value = "bench.json")]
    pub out: PathBuf,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

fn class_name(class: ErrorClass) -> &'static str {
    match class {
        ErrorClass::Usage => "usage",
        ErrorClass::Data => "data",
        ErrorClass::Numeric => "numeric",
    }
}

fn report_error(kind: &str, class: ErrorClass, message: &str) -> ExitCode {
    let code = exit_code(class);
    let body = serde_json::json!({
        "error": {
            "kind": kind,
            "class": class_name(class),
            "message": message,
            "exit_code": code,
        }
    });
    eprintln!("{body}");
    ExitCode::from(code)
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, Error> {
    match std::env::var("UNIFILTER_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::Config(format!("UNIFILTER_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(flag),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let mode = if cli.strict { ReadMode::Strict } else { ReadMode::Lenient };
    let start = Instant::now();
    let (manifest_path, mut manifest) = match &cli.command {
        Command::Gen(a) => commands::gen(a, mode)?,
        Command::Cluster(a) => commands::cluster(a, mode)?,
        Command::Train(a) => commands::train(a, mode)?,
        Command::Eval(a) => commands::eval(a, mode)?,
        Command::Score(a) => commands::score(a, mode)?,
        Command::Filter(a) => commands::filter(a, mode)?,
        Command::DfnFilter(a) => commands::dfn_filter(a, mode)?,
        Command::Pack(a) => commands::pack(a, mode)?,
        Command::Stats(a) => commands::stats(a, mode)?,
        Command::Bench(a) => commands::bench(a)?,
    };
    manifest.wall_time_secs = start.elapsed().as_secs_f64();
    manifest::write_json(&manifest_path, &manifest)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return report_error("usage", ErrorClass::Usage, first);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(e.kind(), e.class(), &e.to_string()),
    }
}
