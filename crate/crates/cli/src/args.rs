use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sgg_core::analysis::{Context, Target};
use sgg_core::direction_encoding::FusionVariant;
use sgg_core::global_interaction::GraphVariant;

/// Scene graph generation runs on synthetic planted-rule corpora.
///
/// Configuration is layered: built-in defaults, then the `--config` TOML
/// file (flat keys), then `SGG_<KEY>` environment variables, then flags.
#[derive(Debug, Parser)]
#[command(name = "sgg", version)]
pub struct Cli {
    /// Seed for generation and training; overrides config and environment.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// TOML file with configuration keys for the chosen command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-rule corpus.
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint and an epoch log.
    Train(TrainArgs),
    /// Score a checkpoint or a prediction file against a corpus.
    Eval(EvalArgs),
    /// Co-occurrence table, per-predicate variance and pairwise distances.
    Analyze(AnalyzeArgs),
    /// Keep only relationship pairs annotated in both directions.
    BrBuild(BrBuildArgs),
    /// Top-k guessing accuracy of a frequency baseline.
    GuessCurve(GuessCurveArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output scene file.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of training scenes; overrides `scenes`.
    #[arg(long)]
    pub scenes: Option<usize>,
    /// Extra scenes drawn from the same rule table for a held-out split.
    #[arg(long, default_value_t = 0, requires = "heldout_out")]
    pub heldout: usize,
    #[arg(long)]
    pub heldout_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training scene file.
    #[arg(long)]
    pub train: PathBuf,
    /// Scene file scored after every epoch.
    #[arg(long)]
    pub eval: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Epoch log CSV; defaults to `<out>.log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub graph: Option<GraphVariant>,
    #[arg(long)]
    pub fusion: Option<FusionVariant>,
    #[arg(long)]
    pub no_lih: bool,
    #[arg(long)]
    pub no_dse: bool,
    #[arg(long)]
    pub no_gih: bool,
    #[arg(long)]
    pub no_ar: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth scene file.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
    pub checkpoint: Option<PathBuf>,
    /// Ranked triplets per scene instead of a checkpoint.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Metrics CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the checkpoint's ranked triplets here.
    #[arg(long, requires = "checkpoint")]
    pub pred_out: Option<PathBuf>,
    /// Cutoffs for R@K and mR@K; defaults to the checkpoint's.
    #[arg(long, value_delimiter = ',')]
    pub recall_ks: Option<Vec<usize>>,
    /// Cutoffs for pR@K; defaults to the checkpoint's.
    #[arg(long, value_delimiter = ',')]
    pub pair_ks: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BrBuildArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output scene file; a `<out>.summary.csv` is written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GuessCurveArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub eval: PathBuf,
    /// Revealed context, comma separated; empty for none.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub condition: Vec<Context>,
    #[arg(long, default_value = "edge")]
    pub target: Target,
    #[arg(long)]
    pub out: PathBuf,
}
