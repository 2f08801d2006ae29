//! `gazecxr`: curate gaze-annotated radiographs, split and summarize the
//! result, score generated reports, and drive the toy generator.
//!
//! Exit codes: 0 success, 1 data error, 2 configuration or usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Marks an error as a configuration problem (exit code 2).
#[derive(Debug)]
pub struct ConfigFault(pub String);

impl std::fmt::Display for ConfigFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigFault {}

#[derive(Parser, Debug)]
#[command(
    name = "gazecxr",
    version,
    about = "Gaze-grounded chest X-ray report toolkit"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = "GAZECXR_CONFIG")]
    pub config: Option<PathBuf>,

    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    /// Validate configuration and inputs without writing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,

    /// Run single-threaded even when built with parallel support.
    #[arg(long, global = true)]
    pub sequential: bool,

    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build per-region heatmaps and reports from a raw dataset manifest.
    Curate(CurateArgs),
    /// Recompute the train/val/test assignment stored in a manifest.
    Split(SplitArgs),
    /// Histograms of report length and heatmap area ratios.
    Stats(StatsArgs),
    /// Score generated reports and heatmaps against a curated reference.
    Eval(EvalArgs),
    /// Train the toy generator on synthetic studies.
    ToyTrain(ToyTrainArgs),
    /// Finite-difference audit of the toy generator's gradients on the
    /// 32x32, D=8 reference configuration.
    ToyCheck(ToyCheckArgs),
    /// Write a seeded synthetic raw dataset with a manifest.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct CurateArgs {
    /// Directory holding manifest.json (defaults to paths.input).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Destination for curated studies (defaults to paths.output).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Gaussian sigma in pixels; overrides curation.sigma.
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Explicit train,val,test counts.
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
    /// train,val,test ratios.
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Curated dataset directory.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Where CSV (and SVG) files go.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Also draw SVG bar charts.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Generated JSONL file.
    #[arg(long)]
    pub generated: PathBuf,
    /// Curated reference directory.
    #[arg(long)]
    pub reference: PathBuf,
    /// Metrics CSV path; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ToyTrainArgs {
    #[arg(long)]
    pub studies: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parameter file to write after training.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Per-step, per-sample loss CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Stop as soon as greedy decoding reproduces every training report.
    #[arg(long)]
    pub until_exact: bool,
    /// Attend on pixels instead of features.
    #[arg(long)]
    pub pixel_mode: bool,
}

#[derive(Args, Debug)]
pub struct ToyCheckArgs {
    /// Model seeds to audit.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4])]
    pub seeds: Vec<u64>,
    /// Scalars sampled per seed; defaults to toy.grad_check_params.
    #[arg(long)]
    pub params: Option<usize>,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub studies: usize,
    /// Square image side in pixels.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigFault>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
