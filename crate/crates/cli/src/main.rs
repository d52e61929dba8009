mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use attnrank::data_io::DatasetFormat;
use attnrank::evaluation::LengthKey;
use attnrank::model::{AttentionMode, PoolingMode};
use attnrank::profile::Profile;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "attnrank", version, about = "Attention-based answer ranking: train, evaluate, explain")]
struct Cli {
    /// Default directory for outputs that are not given an explicit path.
    #[arg(long, global = true, env = "ATTNRANK_OUT_DIR", default_value = "attnrank-out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic planted-keyword corpus as train/dev/test record files.
    Synth(SynthArgs),
    /// Train skip-gram word embeddings on a training corpus.
    TrainEmbeddings(TrainEmbeddingsArgs),
    /// Train the ranking model.
    Train(TrainArgs),
    /// Rank a dataset with a checkpoint and report MRR/NDCG by answer length.
    Eval(EvalArgs),
    /// Show per-token answer attention for one question and its answers.
    Explain(ExplainArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Records,
    TrecQa,
}

impl From<FormatArg> for DatasetFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Records => DatasetFormat::Records,
            FormatArg::TrecQa => DatasetFormat::TrecQa,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProfileArg {
    Trec,
    Liveqa,
    Toy,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Trec => Profile::Trec,
            ProfileArg::Liveqa => Profile::Liveqa,
            ProfileArg::Toy => Profile::Toy,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AttentionArg {
    Scalar,
    Featurewise,
    Uniform,
}

impl From<AttentionArg> for AttentionMode {
    fn from(a: AttentionArg) -> Self {
        match a {
            AttentionArg::Scalar => AttentionMode::Scalar,
            AttentionArg::Featurewise => AttentionMode::Featurewise,
            AttentionArg::Uniform => AttentionMode::Uniform,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PoolingArg {
    Max,
    Sum,
}

impl From<PoolingArg> for PoolingMode {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::Max => PoolingMode::Max,
            PoolingArg::Sum => PoolingMode::Sum,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LengthKeyArg {
    Max,
    Mean,
    Top,
}

impl From<LengthKeyArg> for LengthKey {
    fn from(k: LengthKeyArg) -> Self {
        match k {
            LengthKeyArg::Max => LengthKey::MaxCandidate,
            LengthKeyArg::Mean => LengthKey::MeanCandidate,
            LengthKeyArg::Top => LengthKey::TopRanked,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SynthKind {
    Toy,
    LongNoise,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "toy")]
    kind: SynthKind,
    #[arg(long, default_value_t = 30)]
    train: usize,
    #[arg(long, default_value_t = 0)]
    dev: usize,
    #[arg(long, default_value_t = 0)]
    test: usize,
    #[arg(long, default_value_t = 4)]
    candidates: usize,
    /// Emit 1-4 grades instead of 0/1.
    #[arg(long)]
    graded: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for train.tsv, dev.tsv and test.tsv (default: the output directory).
    #[arg(long)]
    dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainEmbeddingsArgs {
    /// Training split; the embedding corpus is its questions and answers.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "records")]
    format: FormatArg,
    #[arg(long, value_enum, default_value = "trec")]
    profile: ProfileArg,
    /// Vector size (default from the profile).
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    min_count: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Embedding file; the vocabulary goes next to it with a `.vocab.txt` extension.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    /// Development split for per-epoch MRR, best-checkpoint choice and early stopping.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, value_enum, default_value = "records")]
    format: FormatArg,
    #[arg(long, value_enum, default_value = "trec")]
    profile: ProfileArg,
    #[arg(long, default_value_t = 50)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.01002)]
    lrelu: f64,
    /// Epoch count (default from the profile).
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "scalar")]
    attention: AttentionArg,
    #[arg(long, value_enum, default_value = "max")]
    pooling: PoolingArg,
    /// Width of the attention layer (default: embedding width).
    #[arg(long)]
    att_dim: Option<usize>,
    #[arg(long)]
    hidden1_dim: Option<usize>,
    #[arg(long)]
    hidden2_dim: Option<usize>,
    #[arg(long)]
    head_dim: Option<usize>,
    #[arg(long, default_value_t = 40)]
    max_q_len: usize,
    #[arg(long, default_value_t = 1000)]
    max_a_len: usize,
    /// Also give question tokens an overlap flag.
    #[arg(long)]
    question_overlap: bool,
    /// Epochs without dev improvement before stopping.
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long)]
    no_early_stop: bool,
    #[arg(long)]
    no_shuffle: bool,
    #[arg(long, default_value_t = 1.0)]
    positive_weight: f64,
    /// Update embedding rows during training.
    #[arg(long)]
    fine_tune: bool,
    /// Grade at or above which a graded answer counts as relevant.
    #[arg(long)]
    grade_threshold: Option<u32>,
    /// Override |a_max| used for the initialization bound.
    #[arg(long)]
    a_max: Option<usize>,
    /// Run directory (default: <out-dir>/run).
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "records")]
    format: FormatArg,
    #[arg(long, value_enum, default_value = "trec")]
    profile: ProfileArg,
    /// Comma-separated bucket edges in tokens (default from the profile).
    #[arg(long, value_delimiter = ',')]
    buckets: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value = "max")]
    length_key: LengthKeyArg,
    #[arg(long)]
    grade_threshold: Option<u32>,
    /// Leave questions without a relevant answer out of MRR.
    #[arg(long)]
    drop_unanswerable: bool,
    /// Score with the keyword-overlap baseline instead of the model.
    #[arg(long)]
    baseline: bool,
    /// Report directory (default: <out-dir>/eval).
    #[arg(long)]
    report_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    question: String,
    /// Candidate answer text; repeat for several answers.
    #[arg(long = "answer")]
    answers: Vec<String>,
    /// File with one candidate answer per line.
    #[arg(long)]
    answers_file: Option<PathBuf>,
    /// HTML output (default: <out-dir>/explain.html).
    #[arg(long)]
    html: Option<PathBuf>,
    /// Print token:weight pairs instead of colored output.
    #[arg(long)]
    plain: bool,
}

/// Failure classes with distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let argv: Vec<String> = std::env::args().collect();
    let outcome = match cli.command {
        Command::Synth(a) => commands::synth(&cli.out_dir, a, &argv),
        Command::TrainEmbeddings(a) => commands::train_embeddings(&cli.out_dir, a, &argv),
        Command::Train(a) => commands::train(&cli.out_dir, a, &argv),
        Command::Eval(a) => commands::eval(&cli.out_dir, a, &argv),
        Command::Explain(a) => commands::explain(&cli.out_dir, a, &argv),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
