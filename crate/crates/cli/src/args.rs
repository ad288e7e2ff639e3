use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use otcnet_core::SimConfig;

/// Declares one optional override flag per config field. Each flag reads its
/// default from an `OTCNET_`-prefixed environment variable.
macro_rules! config_args {
    ($($field:ident: $ty:ty = $env:literal),* $(,)?) => {
        #[derive(Debug, Clone, Default, Args)]
        pub struct ConfigArgs {
            /// Flat TOML file of config fields; flags override its values.
            #[arg(long, global = true, env = "OTCNET_CONFIG")]
            pub config: Option<PathBuf>,
            /// Master seed; overrides `rng_seed`.
            #[arg(long, global = true, env = "OTCNET_SEED")]
            pub seed: Option<u64>,
            $(
                #[arg(long, global = true, env = $env)]
                pub $field: Option<$ty>,
            )*
        }

        impl ConfigArgs {
            pub fn apply(&self, config: &mut SimConfig) {
                $(
                    if let Some(v) = self.$field.clone() {
                        config.$field = v;
                    }
                )*
                if let Some(seed) = self.seed {
                    config.rng_seed = seed;
                }
            }
        }
    };
}

config_args! {
    n_value_investors: usize = "OTCNET_N_VALUE_INVESTORS",
    n_trend_investors: usize = "OTCNET_N_TREND_INVESTORS",
    n_dealers: usize = "OTCNET_N_DEALERS",
    bid_offer: f64 = "OTCNET_BID_OFFER",
    dealer_position_limit: f64 = "OTCNET_DEALER_POSITION_LIMIT",
    prob_of_link: f64 = "OTCNET_PROB_OF_LINK",
    trade_size_cap: f64 = "OTCNET_TRADE_SIZE_CAP",
    market_disparity: f64 = "OTCNET_MARKET_DISPARITY",
    enable_broker_market: bool = "OTCNET_ENABLE_BROKER_MARKET",
    skew_coefficient: f64 = "OTCNET_SKEW_COEFFICIENT",
    vi_sigma: f64 = "OTCNET_VI_SIGMA",
    target_mixture_sigma: f64 = "OTCNET_TARGET_MIXTURE_SIGMA",
    initial_price: f64 = "OTCNET_INITIAL_PRICE",
    discount: f64 = "OTCNET_DISCOUNT",
    batch_size: usize = "OTCNET_BATCH_SIZE",
    replay_capacity: usize = "OTCNET_REPLAY_CAPACITY",
    learning_rate: f64 = "OTCNET_LEARNING_RATE",
    soft_update_tau: f64 = "OTCNET_SOFT_UPDATE_TAU",
    epsilon_start: f64 = "OTCNET_EPSILON_START",
    epsilon_decay: f64 = "OTCNET_EPSILON_DECAY",
    epsilon_floor: f64 = "OTCNET_EPSILON_FLOOR",
    state_scale: f64 = "OTCNET_STATE_SCALE",
    reward_scale: f64 = "OTCNET_REWARD_SCALE",
    learning_enabled: bool = "OTCNET_LEARNING_ENABLED",
}

#[derive(Debug, Parser)]
#[command(name = "otcnet", version, about = "Networked OTC market simulator")]
pub struct Cli {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Worker threads for multi-run commands; defaults to all cores.
    #[arg(long, global = true, env = "OTCNET_WORKERS")]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write its trade log, mid history and snapshot.
    Run(RunArgs),
    /// Train trend investors from scratch on one or more seeds.
    Train(TrainArgs),
    /// Crash value-investor targets mid-run and record the aftermath.
    CrashDemo(CrashArgs),
    /// Sweep the link probability over replicate runs.
    Sweep(SweepArgs),
    /// Summary statistics of a previous `run` output directory.
    Stats(StatsArgs),
    /// Per-layer summaries and principal coordinates of trained weights.
    ExportWeights(ExportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, default_value_t = 3000)]
    pub ticks: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Weights file from `train`; trend investors start trained and stop learning.
    #[arg(long)]
    pub freeze_weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Comma-separated seeds; defaults to the config seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Tick budget for reaching the exploration floor.
    #[arg(long, default_value_t = otcnet_core::analytics::experiments::DEFAULT_TRAINING_BUDGET)]
    pub budget: u64,
    /// Ticks simulated after training completes.
    #[arg(long, default_value_t = 10_000)]
    pub measure_ticks: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrashArgs {
    #[arg(long, default_value_t = 1000)]
    pub crash_tick: u64,
    #[arg(long, default_value_t = 3000)]
    pub ticks: u64,
    /// Span compared either side of the crash.
    #[arg(long, default_value_t = 500)]
    pub window: usize,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub freeze_weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated link probabilities.
    #[arg(long, value_delimiter = ',', conflicts_with = "grid")]
    pub p_values: Vec<f64>,
    /// Evenly spaced grid as `start:stop:step`.
    #[arg(long)]
    pub grid: Option<String>,
    /// Replicates per value, seeded consecutively from the config seed.
    #[arg(long, default_value_t = 8)]
    pub replicates: u64,
    #[arg(long, default_value_t = 5000)]
    pub ticks: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Trained weights installed in every replicate. Without them each
    /// replicate trains its own trend investors first.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Directory written by `run` or `crash-demo`.
    #[arg(long, default_value = "out")]
    pub dir: PathBuf,
    /// First tick included; defaults to the trained-regime tick when known.
    #[arg(long)]
    pub from_tick: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Weights file written by `train`.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}
