use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Conformal prediction on graphs: vanilla split conformal and the
/// topology-aware efficiency correction.
///
/// Every subcommand also accepts `--config FILE`: a JSON object whose keys
/// are long flag names (`snake_case` or `kebab-case`) and whose values are
/// strings, numbers or booleans. Flags given on the command line override
/// values from the file.
#[derive(Debug, Parser)]
#[command(name = "cfgnn", version, propagate_version = true)]
pub struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, env = "CFGNN_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// JSON file with default values for this subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset bundle.
    Synth(SynthArgs),
    /// Train the base GCN and write a model file.
    Train(TrainArgs),
    /// Vanilla split conformal over repeated calibration/test splits.
    Conformal(ConformalArgs),
    /// Train the correction model and compare its report against the base.
    Correct(CorrectArgs),
    /// CSV of the exact distribution of empirical test coverage.
    CoverageDist(CoverageDistArgs),
    /// CSV of per-node structural features.
    Netfeat(NetfeatArgs),
    /// Worst-slice coverage of one calibrated split.
    Wsc(WscArgs),
    /// Are prediction set sizes closer across edges than across random pairs?
    GapTest(GapTestArgs),
}

pub const SUBCOMMANDS: &[&str] = &[
    "synth",
    "train",
    "conformal",
    "correct",
    "coverage-dist",
    "netfeat",
    "wsc",
    "gap-test",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Stochastic block model with Gaussian class features.
    Sbm,
    /// Linear targets with edge-correlated noise amplitude.
    Regression,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKind::Sbm)]
    pub kind: SynthKind,
    /// Bundle directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub num_nodes: Option<usize>,
    /// Classes (sbm).
    #[arg(long)]
    pub num_classes: Option<usize>,
    /// Blocks (regression).
    #[arg(long)]
    pub num_blocks: Option<usize>,
    #[arg(long)]
    pub p_in: Option<f64>,
    #[arg(long)]
    pub p_out: Option<f64>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Distance scale between class means (sbm).
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub feature_noise: Option<f64>,
    /// Scale of the linear target weights (regression).
    #[arg(long)]
    pub weight_scale: Option<f64>,
    /// Rounds of neighbour averaging applied to the noise amplitude.
    #[arg(long)]
    pub smoothing_steps: Option<usize>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    /// Largest noise amplitude; amplitudes span [1, hetero_scale].
    #[arg(long)]
    pub hetero_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub valid_frac: Option<f64>,
    /// Largest calibration set drawn from the held-out nodes.
    #[arg(long)]
    pub calib_cap: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset bundle directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Model JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Miscoverage used for the quantile levels of a regression head.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ConformalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Base model JSON written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Report JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 100)]
    pub splits: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Membership {
    /// Soft membership grows as the score falls below the threshold.
    Below,
    Above,
}

#[derive(Debug, Args)]
pub struct CorrectArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the trained correction model here.
    #[arg(long)]
    pub out_model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 100)]
    pub splits: usize,
    /// Fraction of calibration nodes used to train the correction.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Temperature of the soft set membership.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub reg_coeff: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long, value_enum)]
    pub membership: Option<Membership>,
    /// Add the base scores back onto the correction output.
    #[arg(long)]
    pub residual: bool,
    /// Redraw the two correction halves every epoch.
    #[arg(long)]
    pub resample: bool,
}

#[derive(Debug, Args)]
pub struct CoverageDistArgs {
    /// Calibration set size.
    #[arg(long)]
    pub n: usize,
    /// Test set size.
    #[arg(long)]
    pub m: usize,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Number of evenly spaced points in (0, 1].
    #[arg(long, default_value_t = 100)]
    pub grid: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NetfeatArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeatureSpace {
    /// Node input features.
    Raw,
    /// Degree, clustering, PageRank, betweenness, closeness, harmonic.
    Network,
}

#[derive(Debug, Args)]
pub struct ScoredArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Correction model written by `correct --out-model`.
    #[arg(long)]
    pub correction: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct WscArgs {
    #[command(flatten)]
    pub scored: ScoredArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = FeatureSpace::Raw)]
    pub features: FeatureSpace,
    /// Smallest slab, as a fraction of the selection nodes.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Random directions tried.
    #[arg(long)]
    pub directions: Option<usize>,
    /// Fraction of test nodes used to select the slab.
    #[arg(long)]
    pub split_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GapTestArgs {
    #[command(flatten)]
    pub scored: ScoredArgs,
    #[arg(long)]
    pub out: PathBuf,
}
