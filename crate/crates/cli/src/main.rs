mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fewshot_core::classify::Method;
use fewshot_core::scorer::{PairDirection, ScorerSpec};

/// Few-shot intent detection with out-of-scope rejection.
#[derive(Debug, Parser)]
#[command(name = "fewshot", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Values given here override the
/// experiment config file.
#[derive(Debug, Args)]
pub struct Global {
    /// Random seed (sampling, augmentation, pair subsampling).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// builtin, cmd:<program args>, or tcp:<host>:<port>.
    #[arg(long, global = true)]
    pub scorer: Option<ScorerSpec>,
    /// input-first, example-first or both-max.
    #[arg(long, global = true)]
    pub pair_direction: Option<PairDirection>,
    /// Acceptance threshold; inputs with confidence >= threshold are accepted.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Remote scorer handles opened per batch.
    #[arg(long, global = true)]
    pub scorer_parallelism: Option<usize>,
    /// Client-side cap on items per remote request.
    #[arg(long, global = true)]
    pub batch_limit: Option<usize>,
    /// Dimension of the built-in hashed embeddings.
    #[arg(long, global = true)]
    pub embed_dim: Option<usize>,
    /// Worker threads (default: one per logical core).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Disable data parallelism.
    #[arg(long, global = true)]
    pub sequential: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corpus conversion and statistics.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Draw a K-shot example set from the training split.
    Sample(SampleArgs),
    /// Pair generation.
    #[command(subcommand)]
    Pairs(PairsCmd),
    /// Data augmentation.
    #[command(subcommand)]
    Augment(AugmentCmd),
    /// Classify utterances read one per line; prints one JSON record per line.
    Predict(PredictArgs),
    /// Pick the threshold that maximizes the dev joint score.
    Calibrate(EvalArgs),
    /// Metrics on a split at a fixed threshold.
    Evaluate(EvaluateArgs),
    /// Write curve, histogram, case and embedding tables.
    Report(ReportArgs),
    /// Seeded multi-run experiments.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
    /// Serve the built-in scorer over the line protocol.
    #[command(subcommand)]
    Scorer(ScorerCmd),
}

#[derive(Debug, Subcommand)]
pub enum CorpusCmd {
    /// Convert an external corpus to the canonical format.
    Convert {
        #[arg(long, value_enum)]
        from: SourceFormat,
        input: PathBuf,
        output: PathBuf,
        /// JSON object mapping domain -> list of intents.
        #[arg(long)]
        domains: Option<PathBuf>,
    },
    /// Split, domain and intent counts.
    Stats { dataset: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SourceFormat {
    Clinc,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    pub dataset: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum PairsCmd {
    /// Write every ordered example pair as premise/hypothesis/match TSV.
    Dump {
        fewshot: PathBuf,
        /// Keep at most this many negatives per positive.
        #[arg(long)]
        negative_cap: Option<usize>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EditModeArg {
    Count,
    PerWordBernoulli,
}

#[derive(Debug, Subcommand)]
pub enum AugmentCmd {
    /// Four EDA variants (SR, RI, RS, RD) per few-shot example.
    Eda {
        fewshot: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long, default_value_t = fewshot_core::augment::DEFAULT_P_EDIT)]
        p_edit: f64,
        #[arg(long, value_enum, default_value = "count")]
        mode: EditModeArg,
        /// Also emit outputs where the technique could not apply.
        #[arg(long)]
        keep_degenerate: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Validate an externally generated augmentation file.
    Ingest {
        file: PathBuf,
        /// Check labels against this corpus.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Write the accepted records in four-column form.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

/// Which model to build and from which examples.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Few-shot example set (JSON, as written by `sample`).
    #[arg(long)]
    pub fewshot: PathBuf,
    #[arg(long)]
    pub method: Option<Method>,
    /// Neighbours voting in emb-knn.
    #[arg(long)]
    pub knn_k: Option<usize>,
    /// Candidates retrieved by dnnc-joint.
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Utterances, one per line (default: stdin).
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub domain: Option<String>,
    /// Write the full threshold curve here.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Dev,
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long, value_enum, default_value = "dev")]
    pub split: SplitArg,
    /// Also dump input embeddings.
    #[arg(long)]
    pub embeddings: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCmd {
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub knn_k: Option<usize>,
    #[arg(long)]
    pub domain: Option<String>,
    /// Directory for results.tsv, aggregate.tsv and results.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ScorerCmd {
    /// Answer requests on stdin/stdout, or on a TCP address.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
