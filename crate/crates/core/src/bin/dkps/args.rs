use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dkps::harness::{AlphaPolicy, ReferenceCount};
use dkps::predictors::{ClipOrder, Method};
use dkps::selection::FitCriterion;

const NOTATION: &str = "\
Notation: M is the number of benchmark queries, m the query budget (size of the
subset each target answers), n the number of reference models, d the
perspective-space dimension, alpha the ensemble weight on the sample score and
B the number of candidate query sets scored during selection.";

#[derive(Debug, Parser)]
#[command(name = "dkps", version, about = "Predict benchmark scores from small query subsets", after_help = NOTATION)]
pub struct Cli {
    /// Worker threads for trials and candidates (default: logical cores).
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,

    /// Log progress to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check that a dataset directory parses and every model covers every query.
    Validate(ValidateArgs),
    /// Write perspective-space coordinates for every model.
    Dkps(DkpsArgs),
    /// Predict one model's benchmark score from a query subset.
    Predict(PredictArgs),
    /// Leave-one-family-out evaluation of several methods and budgets.
    #[command(after_help = NOTATION)]
    Evaluate(EvaluateArgs),
    /// Leave-one-family-out evaluation over a grid of n, d and alpha.
    #[command(after_help = NOTATION)]
    Sweep(SweepArgs),
    /// Pick the query subset whose perspectives best fit the reference scores.
    #[command(after_help = NOTATION)]
    SelectQueries(SelectArgs),
    /// Fit Rasch item difficulties and model abilities.
    IrtFit(IrtFitArgs),
    /// Generate a synthetic population with known ground truth.
    Synth(SynthArgs),
    /// Run concentration and query-efficiency experiments on synthetic data.
    Theory(TheoryArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Dataset directory.
    pub dir: PathBuf,
    /// Print the full report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct DkpsArgs {
    /// Dataset directory.
    pub dir: PathBuf,
    /// Query subset: a file with one query id per line, or "m,seed" to draw
    /// m of the M queries at random.
    #[arg(long, value_name = "FILE|m,seed")]
    pub queries: String,
    /// Perspective-space dimension d.
    #[arg(long = "dim", short = 'd', default_value_t = dkps::geometry::DEFAULT_DIM)]
    pub dim: usize,
    /// Models to tag as targets (repeatable); all others are references.
    #[arg(long = "target", value_name = "MODEL")]
    pub targets: Vec<String>,
    /// Output CSV (default: stdout). A manifest is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Dataset directory.
    pub dir: PathBuf,
    /// Model whose score is predicted.
    #[arg(long)]
    pub target: String,
    /// Methods, comma separated or repeated: population_mean, sample_score,
    /// dkps_ols, dkps_knn<k>, dkps_knn_sqrt, ensemble, ensemble_knn<k>, irt,
    /// dkps_irt, ens_dkps_irt. "dkps_knn" and "ensemble_knn" take k from --k.
    #[arg(long = "method", value_delimiter = ',', required = true)]
    pub methods: Vec<String>,
    /// Query budget m, drawn at random with --seed. Ignored with --queries.
    #[arg(long)]
    pub m: Option<usize>,
    /// Seed for the random query subset.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// File with one query id per line.
    #[arg(long, value_name = "FILE")]
    pub queries: Option<PathBuf>,
    /// Ensemble weight alpha on the sample score (default: m / M).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Neighbours k for k-NN methods named without a k.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Perspective-space dimension d.
    #[arg(long = "dim", short = 'd', default_value_t = dkps::geometry::DEFAULT_DIM)]
    pub dim: usize,
    /// File with one reference model id per line (default: every other model).
    #[arg(long, value_name = "FILE")]
    pub references: Option<PathBuf>,
    /// Drop the target's whole family from the default references.
    #[arg(long)]
    pub exclude_family: bool,
    #[arg(long, value_enum)]
    pub clip_order: Option<ClipOrderArg>,
    /// Score threshold for binarizing non-binary responses before IRT.
    #[arg(long, default_value_t = dkps::irt::DEFAULT_BINARIZE_THRESHOLD)]
    pub irt_threshold: f64,
}

/// Flags that override keys of an evaluation or sweep file.
#[derive(Debug, Args)]
pub struct ExperimentOverrides {
    /// Methods, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Query budgets m, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub m: Option<Vec<usize>>,
    /// References per trial n: a count or "all".
    #[arg(long)]
    pub n: Option<ReferenceCount>,
    /// Perspective-space dimension d.
    #[arg(long = "dim", short = 'd')]
    pub dim: Option<usize>,
    /// Ensemble weight alpha: a number in [0, 1] or "m_over_M".
    #[arg(long)]
    pub alpha: Option<AlphaPolicy>,
    /// Number of trials (query subsets) per budget.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Base seed; trial t uses seed + t.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub clip_order: Option<ClipOrderArg>,
    /// Score threshold for binarizing non-binary responses before IRT.
    #[arg(long)]
    pub irt_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset directory.
    pub dir: PathBuf,
    /// Evaluation file (TOML, schema_version = 1).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "dkps-evaluate")]
    pub out: PathBuf,
    /// Also summarise MAE over this many random reference collections.
    #[arg(long)]
    pub collections: Option<usize>,
    #[command(flatten)]
    pub overrides: ExperimentOverrides,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Dataset directory.
    pub dir: PathBuf,
    /// Sweep file (TOML, schema_version = 1) with a [grid] table of n, dim
    /// and alpha lists.
    #[arg(long)]
    pub grid: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "dkps-sweep")]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: ExperimentOverrides,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Dataset directory.
    pub dir: PathBuf,
    /// Query budget m.
    #[arg(long)]
    pub m: usize,
    /// Number of random candidate query sets B.
    #[arg(long = "B", visible_alias = "candidates", default_value_t = dkps::selection::DEFAULT_CANDIDATES)]
    pub candidates: usize,
    /// Perspective-space dimension d.
    #[arg(long = "dim", short = 'd', default_value_t = dkps::geometry::DEFAULT_DIM)]
    pub dim: usize,
    /// Seed for candidate sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Goodness-of-fit criterion on the reference models.
    #[arg(long, value_enum, default_value_t = CriterionArg::InSample)]
    pub criterion: CriterionArg,
    /// Leave this family out of the references.
    #[arg(long, value_name = "FAMILY")]
    pub exclude_family: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "dkps-select")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IrtFitArgs {
    /// Dataset directory.
    pub dir: PathBuf,
    /// Score threshold for binarizing non-binary responses.
    #[arg(long, default_value_t = dkps::irt::DEFAULT_BINARIZE_THRESHOLD)]
    pub threshold: f64,
    /// Leave this family out of the item-bank fit.
    #[arg(long, value_name = "FAMILY")]
    pub exclude_family: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "dkps-irt")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Population file (TOML, schema_version = 1) with a [population] table.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Override the population seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Embedding storage.
    #[arg(long, value_enum, default_value_t = FormatArg::Jsonl)]
    pub format: FormatArg,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    /// Theory file (TOML, schema_version = 1): [population], [concentration]
    /// (n, r, seeds) and [efficiency] (m, n, trials, base_seed, dim).
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "dkps-theory")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// A run_manifest.json written by an earlier run.
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded location.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ClipOrderArg {
    ComponentsThenEnsemble,
    EnsembleOnly,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CriterionArg {
    InSample,
    LeaveOneOut,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Jsonl,
    Bin,
}

impl From<CriterionArg> for FitCriterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::InSample => FitCriterion::InSample,
            CriterionArg::LeaveOneOut => FitCriterion::LeaveOneOut,
        }
    }
}

impl From<ClipOrderArg> for ClipOrder {
    fn from(c: ClipOrderArg) -> Self {
        match c {
            ClipOrderArg::ComponentsThenEnsemble => ClipOrder::ComponentsThenEnsemble,
            ClipOrderArg::EnsembleOnly => ClipOrder::EnsembleOnly,
        }
    }
}
