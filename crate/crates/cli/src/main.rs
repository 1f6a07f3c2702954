//! Command-line driver: segment images, run partition-only passes, score
//! results against ground truth, and benchmark pipeline phases.

mod cmds;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Errors are funneled into the documented exit codes: 2 for input
/// problems, 3 for evaluation protocol problems, 4 for solver failures,
/// 1 for anything else.
#[derive(Debug)]
pub enum CliError {
    Core(glseg_core::Error),
    Eval(String),
    Input(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Eval(msg) => write!(f, "evaluation error: {msg}"),
            CliError::Input(msg) => write!(f, "input error: {msg}"),
        }
    }
}

impl From<glseg_core::Error> for CliError {
    fn from(e: glseg_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use glseg_core::Error as E;
        match self {
            CliError::Input(_) => 2,
            CliError::Eval(_) => 3,
            CliError::Core(e) => match e {
                E::Io { .. }
                | E::UnsupportedImage { .. }
                | E::Contract(_)
                | E::Ingest(_)
                | E::Dimension { .. }
                | E::Model(_)
                | E::Config(_) => 2,
                E::Solver { .. } => 4,
                E::Invariant(_) => 1,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "glseg",
    version,
    about = "Unsupervised image segmentation over a region graph with local and global connections"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Worker threads for multi-image commands (0 uses all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Segment one image; write label maps, boundary maps, eigenvectors,
    /// and a run manifest.
    Segment(SegmentArgs),
    /// Stop after the spectral partition; write eigenvectors and their
    /// per-region images.
    Partition(PartitionArgs),
    /// Score segmentations in one directory against ground-truth label
    /// maps in another.
    Eval(EvalArgs),
    /// Run the full pipeline over a directory and report per-phase timing
    /// statistics.
    Bench(BenchArgs),
}

#[derive(Args)]
pub struct SegmentArgs {
    /// Input image.
    pub image: PathBuf,
    /// Pipeline configuration file (flat `key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Random seed, recorded in the manifest.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Boundary thresholds rendered as extra label maps.
    #[arg(long, value_delimiter = ',')]
    pub scales: Vec<f64>,
    /// Precomputed superpixel label grid (PNG or CSV).
    #[arg(long, requires = "edges")]
    pub superpixels: Option<PathBuf>,
    /// Precomputed edge-strength grid (PNG or CSV).
    #[arg(long, requires = "superpixels")]
    pub edges: Option<PathBuf>,
    /// Override the configured superpixel count.
    #[arg(long)]
    pub target_n: Option<usize>,
}

#[derive(Args)]
pub struct PartitionArgs {
    /// Input image.
    pub image: PathBuf,
    /// Pipeline configuration file (flat `key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Random seed, recorded in the manifest.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Precomputed superpixel label grid (PNG or CSV).
    #[arg(long, requires = "edges")]
    pub superpixels: Option<PathBuf>,
    /// Precomputed edge-strength grid (PNG or CSV).
    #[arg(long, requires = "superpixels")]
    pub edges: Option<PathBuf>,
    /// Override the configured superpixel count.
    #[arg(long)]
    pub target_n: Option<usize>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Directory of candidate segmentations (label maps, or soft boundary
    /// CSV pairs with --soft).
    #[arg(long)]
    pub seg: PathBuf,
    /// Directory of ground-truth label maps; several per image are allowed
    /// as `<stem>.<k>.png`.
    #[arg(long)]
    pub gt: PathBuf,
    /// Thresholds swept in --soft mode (default: 0.0 to 1.0 in steps of
    /// 0.05).
    #[arg(long, value_delimiter = ',')]
    pub scales: Vec<f64>,
    /// Read `<stem>_h.csv` / `<stem>_v.csv` soft boundary pairs instead of
    /// label maps and sweep thresholds.
    #[arg(long)]
    pub soft: bool,
    /// Write per-image, per-scale metric rows to this CSV file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Directory of input images.
    pub images: PathBuf,
    /// Pipeline configuration file (flat `key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed shared by all runs.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override the configured superpixel count.
    #[arg(long)]
    pub target_n: Option<usize>,
    /// Write the timing table as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match cli.cmd {
        Cmd::Segment(args) => cmds::segment(&args),
        Cmd::Partition(args) => cmds::partition(&args),
        Cmd::Eval(args) => cmds::eval(&args),
        Cmd::Bench(args) => cmds::bench(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
