//! `synth-eval`: sketching, transforms, mutation, match metrics, encoder
//! training, test-free scoring and perturbation reports from one binary.
//!
//! Exit codes: 0 success, 1 unusable input or flags, 2 internal failure.
//! Logs go to stderr; stdout carries only the requested output.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use synth_eval::code::Lang;
use synth_eval::harness::{ExperimentMetric, PerturbationKind, TableField};
use synth_eval::metrics::MetricKind;
use synth_eval::mutate::OperatorClass;
use synth_eval::transform::TransformRule;

fn parse<T: FromStr<Err = synth_eval::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: synth_eval::Error| e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "synth-eval", version, about = "Test-free correctness scoring and metric robustness tooling")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Language of code inputs (python or java) when the extension is unknown.
    #[arg(long, global = true, value_parser = parse::<Lang>)]
    pub lang: Option<Lang>,
    /// Worker threads (default 1).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output file, or directory for commands that write several files.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replace user identifiers with placeholders.
    Sketch(SketchArgs),
    /// Apply one random semantics-preserving transform.
    Transform(TransformArgs),
    /// Mutate one operator in a file, or a share of a corpus.
    Mutate(MutateArgs),
    /// Match metrics as CSV.
    Metrics(MetricsArgs),
    /// Train an encoder checkpoint.
    Train(TrainArgs),
    /// Test-free score of a pair or a corpus.
    Score(ScoreArgs),
    /// Perturb a corpus.
    Perturb(PerturbArgs),
    /// Perturbation experiments rendered as tables.
    Report(ReportArgs),
    /// Compare analytic and numeric gradients on tiny random instances.
    GradCheck(GradCheckArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Sketch(_) => "sketch",
            Command::Transform(_) => "transform",
            Command::Mutate(_) => "mutate",
            Command::Metrics(_) => "metrics",
            Command::Train(_) => "train",
            Command::Score(_) => "score",
            Command::Perturb(_) => "perturb",
            Command::Report(_) => "report",
            Command::GradCheck(_) => "grad-check",
        }
    }
}

#[derive(Debug, Args)]
pub struct SketchArgs {
    /// Code file; stdin when absent or `-`.
    pub input: Option<PathBuf>,
    /// Where to write the placeholder map (JSON). Defaults to
    /// `<out>.map.json` when `--out` is given.
    #[arg(long)]
    pub map: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TransformArgs {
    pub input: Option<PathBuf>,
    /// Comma-separated rules (loop, expr, permute, cond); all by default.
    #[arg(long, value_delimiter = ',', value_parser = parse::<TransformRule>)]
    pub rules: Vec<TransformRule>,
}

#[derive(Debug, Args)]
pub struct MutateArgs {
    /// Code file, or a `.jsonl` corpus.
    pub input: Option<PathBuf>,
    /// Comma-separated operator classes; all by default.
    #[arg(long, value_delimiter = ',', value_parser = parse::<OperatorClass>)]
    pub classes: Vec<OperatorClass>,
    /// Share of passing corpus records to mutate.
    #[arg(long, default_value_t = 1.0)]
    pub ratio: f64,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    /// Reference code file.
    #[arg(long = "ref", requires = "pred", conflicts_with = "corpus")]
    pub reference: Option<PathBuf>,
    /// Predicted code file.
    #[arg(long, requires = "reference")]
    pub pred: Option<PathBuf>,
    /// Corpus (JSONL) with reference and prediction per record.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub input: PairArgs,
    /// Comma-separated metrics; all by default.
    #[arg(long = "kind", value_delimiter = ',', value_parser = parse::<MetricKind>)]
    pub kinds: Vec<MetricKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// The configuration file's `[train]` section (or its defaults).
    Config,
    /// Settings tuned for the bundled synthetic corpus.
    Synthetic,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training corpus (JSONL with id, lang, nl, code).
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub corpus: Option<PathBuf>,
    /// Generate this many synthetic units instead of reading a corpus.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Seed of the synthetic corpus; the run seed when absent.
    #[arg(long)]
    pub synthetic_seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Preset::Config)]
    pub preset: Preset,
    /// Hold out the last N units and report variant/mutant separation on them.
    #[arg(long, default_value_t = 0)]
    pub holdout: usize,
    /// Seed of the held-out variant and mutant draws.
    #[arg(long, default_value_t = 99)]
    pub holdout_seed: u64,
    /// Checkpoint path; `--out` when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Per-epoch loss CSV; `<checkpoint>.log.csv` when absent.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Hash,
    Model,
    Remote,
}

#[derive(Debug, Args)]
pub struct ScorerArgs {
    /// Embedding backend; the config's `[score.backend]` when absent.
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Encoder checkpoint (implies `--backend model`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Embedding service root URL (for `--backend remote`).
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Model id sent to the embedding service.
    #[arg(long, default_value = "default")]
    pub model_id: String,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// last-avg, first-last-avg, cls or cls-relu.
    #[arg(long, value_parser = parse::<synth_eval::encoder::PoolingStrategy>)]
    pub pooling: Option<synth_eval::encoder::PoolingStrategy>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub input: PairArgs,
    #[command(flatten)]
    pub scorer: ScorerArgs,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// original, o2s, s2s, syntax or semantic-<percent>.
    #[arg(long, value_parser = parse::<PerturbationKind>)]
    pub kind: PerturbationKind,
    /// Comma-separated seeds; the run seed when absent. Several seeds need
    /// `--out DIR`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FieldArg {
    Mae,
    MeanScore,
    Accuracy,
    Precision,
    Recall,
    F1,
}

impl From<FieldArg> for TableField {
    fn from(f: FieldArg) -> Self {
        match f {
            FieldArg::Mae => TableField::Mae,
            FieldArg::MeanScore => TableField::MeanScore,
            FieldArg::Accuracy => TableField::Accuracy,
            FieldArg::Precision => TableField::Precision,
            FieldArg::Recall => TableField::Recall,
            FieldArg::F1 => TableField::F1,
        }
    }
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated conditions; all eight by default.
    #[arg(long, value_delimiter = ',', value_parser = parse::<PerturbationKind>)]
    pub kinds: Vec<PerturbationKind>,
    /// Comma-separated metrics (match metrics, exact-match, codescore-r,
    /// codescore-r-sim); all by default.
    #[arg(long, value_delimiter = ',', value_parser = parse::<ExperimentMetric>)]
    pub metrics: Vec<ExperimentMetric>,
    /// Seeds for seeded conditions; 0..5 when absent.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Statistic shown in the table.
    #[arg(long, value_enum, default_value_t = FieldArg::Mae)]
    pub field: FieldArg,
    #[command(flatten)]
    pub scorer: ScorerArgs,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 20)]
    pub instances: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

/// A failure of the toolkit itself rather than of its input.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Internal(pub String);

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<Internal>().is_some() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<synth_eval::Error>() {
            return if err.is_input() { 1 } else { 2 };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match std::panic::catch_unwind(|| commands::run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(2),
    }
}
