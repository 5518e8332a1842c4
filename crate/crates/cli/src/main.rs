mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "milbench", version, about = "Benchmark pathology tile encoders with attention MIL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tissue masks and tile grids from PNG thumbnails with geometry sidecars.
    Tile(TileArgs),
    /// Deterministic stand-in embeddings for tile grids.
    MockEncode(MockEncodeArgs),
    /// Synthetic MIL dataset with a matching run config.
    Synth(SynthArgs),
    /// Build the shared split plans for every task in a run config.
    Splits(ConfigArgs),
    /// Train-twice Monte-Carlo cross-validation for every task and encoder.
    Benchmark(ConfigArgs),
    /// Rank encoders and test pairwise differences from metric tables.
    Compare(CompareArgs),
    /// Fit a tile probe on one split of a tile-level task.
    TrainProbe(TrainProbeArgs),
    /// Per-tile predicted classes from a trained probe.
    RegionMap(RegionMapArgs),
}

#[derive(Args)]
pub struct TileArgs {
    /// Directory of `<slide>.png` thumbnails.
    #[arg(long)]
    pub thumbnails: PathBuf,
    /// Directory of `<slide>.json` geometry sidecars.
    #[arg(long)]
    pub geometry: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = milbench::preprocess::DEFAULT_TILE_PX)]
    pub tile_px: u32,
    #[arg(long, default_value_t = milbench::preprocess::DEFAULT_TARGET_MPP)]
    pub target_mpp: f64,
    #[arg(long, default_value_t = milbench::preprocess::DEFAULT_MIN_TISSUE_FRAC)]
    pub min_tissue_frac: f64,
    /// Long side of the thumbnail used for masking; 0 keeps the input size.
    #[arg(long, default_value_t = milbench::preprocess::DEFAULT_THUMBNAIL_LONG_SIDE)]
    pub thumbnail_long_side: usize,
    /// Keep pen-marked pixels as tissue.
    #[arg(long)]
    pub no_pen_filter: bool,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args)]
pub struct MockEncodeArgs {
    /// Directory of `<slide>.tiles.csv` grids.
    #[arg(long)]
    pub tiles: PathBuf,
    #[arg(long)]
    pub feature_root: PathBuf,
    #[arg(long)]
    pub encoder: String,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SynthKindArg {
    MilBinary,
    MilMulticlass,
    Regression,
    TileLevel,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "mil-binary")]
    pub kind: SynthKindArg,
    /// Classes for multiclass and tile-level data.
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long)]
    pub n_slides: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Encoder ids to generate; each gets its own draw of noise.
    #[arg(long, default_value = "synth")]
    pub encoders: Vec<String>,
    /// Shuffle slide labels across slides (permutation control).
    #[arg(long)]
    pub permute_labels: bool,
}

#[derive(Args)]
pub struct ConfigArgs {
    /// TOML run config.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub output_root: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum FamilyArg {
    PerTask,
    Global,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Directory of metric tables with `.meta.json` sidecars.
    #[arg(long)]
    pub tables: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = milbench::stats::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = milbench::stats::STRONG_ALPHA)]
    pub strong_alpha: f64,
    #[arg(long, value_enum, default_value = "per-task")]
    pub family: FamilyArg,
    #[arg(long, default_value_t = 15)]
    pub min_valid_splits: usize,
}

#[derive(Args)]
pub struct TrainProbeArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub encoder: String,
    #[arg(long, default_value_t = 0)]
    pub split: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RegionMapArgs {
    /// Probe parameters written by `train-probe`.
    #[arg(long)]
    pub probe: PathBuf,
    /// Tile grid CSV of the slide.
    #[arg(long)]
    pub tiles: PathBuf,
    /// Feature file of the slide.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Tile(a) => commands::tile(&a),
        Command::MockEncode(a) => commands::mock_encode(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Splits(a) => commands::splits(&a),
        Command::Benchmark(a) => commands::benchmark(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::TrainProbe(a) => commands::train_probe(&a),
        Command::RegionMap(a) => commands::region_map(&a),
    };
    match result {
        Ok(commands::Outcome::Done) => ExitCode::SUCCESS,
        Ok(commands::Outcome::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
