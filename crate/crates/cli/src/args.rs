use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "camoguard",
    version,
    about = "Uncertainty-aware camouflaged-object classification with human deferral"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every pipeline command. Flags override the config file;
/// `--seed` also overrides `CAMOGUARD_SEED`.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Training seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChannelArg {
    Perfect,
    Simulated,
    Replay,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ChannelArgs {
    #[arg(long, value_enum)]
    pub channel: Option<ChannelArg>,
    /// Simulated-channel sensitivity.
    #[arg(long)]
    pub sens: Option<f64>,
    /// Simulated-channel specificity.
    #[arg(long)]
    pub spec: Option<f64>,
    /// Named simulated-channel preset (`mean`, `s1`..`s8`).
    #[arg(long)]
    pub preset: Option<String>,
    /// Replay CSV `sample_id,predicted_label[,confidence]`.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    #[arg(long)]
    pub channel_seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus and its train/val/test split.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long)]
        data_seed: Option<u64>,
    },
    /// Train the classifier with the uncertainty-aware policy.
    Train {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds; each run goes to `<run-dir>/seed-<s>`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        lambda_u: Option<f64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        method_c: Option<String>,
        /// `both`, `h_only` or `l_only`.
        #[arg(long)]
        aug_target: Option<String>,
    },
    /// Score the test split (or an ingested record file) and dump predictions.
    Score {
        #[command(flatten)]
        common: Common,
        /// Per-view prediction records; switches to post-hoc mode.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Split the scored train set into high/low confidence with one strategy.
    Partition {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method_c: Option<String>,
    },
    /// Defer the most uncertain test predictions and fuse channel labels.
    Defer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        channel: ChannelArgs,
        #[arg(long)]
        proportion: Option<f64>,
    },
    /// Fuse at several deferral proportions.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        channel: ChannelArgs,
        #[arg(long, value_delimiter = ',')]
        proportions: Option<Vec<f64>>,
    },
    /// Rebuild the text and JSON reports from dumped artifacts.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Serve review sessions over HTTP.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, default_value = "run")]
        run_id: String,
        /// Write each completed session here as JSON.
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
        /// Require a judgment for filler items instead of auto-advancing.
        #[arg(long)]
        manual_fillers: bool,
        /// Fillers beyond the minimum of three between targets.
        #[arg(long, default_value_t = 0)]
        extra_fillers: usize,
    },
    /// Compare analytic gradients with central differences.
    GradCheck {
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        /// Hidden widths. With the full `256,32,8` head some seeds put a ReLU
        /// pre-activation within `eps` of zero and the check reports the kink.
        #[arg(long, value_delimiter = ',', default_values_t = [8, 4])]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        batch: usize,
        #[arg(long, default_value_t = camoguard_core::classifier::GRAD_CHECK_EPS)]
        eps: f64,
    },
}
