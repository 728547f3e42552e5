//! `mrae`: dataset tooling, gradient checks and fusion training runs.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "mrae", version, about = "Attention-weighted multiresolution fusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Keep annotations with area below a bound and write a COCO subset.
    FilterCoco(FilterArgs),
    /// Cluster box scales and aspect ratios into anchor parameters.
    ClusterAnchors(AnchorArgs),
    /// Width/height histogram of annotation sizes.
    Histogram(HistogramArgs),
    /// Finite-difference check of every op and both fusion paths.
    Gradcheck(GradcheckArgs),
    /// Train on the synthetic small-object task.
    Train(TrainArgs),
    /// Merge training reports into one table.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct FilterArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1024.0)]
    max_area: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TableFormat {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct AnchorArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    scales: usize,
    #[arg(long, default_value_t = 3)]
    ratios: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = TableFormat::Json)]
    format: TableFormat,
}

#[derive(Debug, Args)]
struct HistogramArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Bin width in pixels.
    #[arg(long, default_value_t = 4.0)]
    bin_width: f64,
    /// Bins per axis; larger sizes land in the last bin.
    #[arg(long, default_value_t = 8)]
    bins: usize,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds starting at `--seed`.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Optional CSV of the per-check results.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FusionKind {
    Soft,
    Mrae,
    Hard,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Precision {
    F64,
    F32,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    fusion: FusionKind,
    /// Template level for mrae (1, 2 or 3).
    #[arg(long)]
    template: Option<u8>,
    /// Level for hard attention: 1, 2, 3 or `random` (drawn from the seed).
    #[arg(long)]
    hard_level: Option<String>,
    /// Switch the mrae template mid-run, as TEMPLATE@STEP.
    #[arg(long)]
    switch_template: Option<String>,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// STEPS:LR segments, comma separated. Defaults to 60/30/10 % of the run
    /// at 3e-4, 3e-5 and 3e-6.
    #[arg(long)]
    lr_schedule: Option<String>,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 1000)]
    n_images: usize,
    #[arg(long, default_value_t = 200)]
    val_images: usize,
    #[arg(long, default_value_t = 1)]
    objects_per_image: usize,
    /// Backbone shape as `key = value` lines.
    #[arg(long)]
    backbone_config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    precision: Precision,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Training output directories.
    #[arg(long, num_args = 1.., required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write a markdown table here.
    #[arg(long)]
    markdown: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::FilterCoco(a) => commands::filter_coco(a),
        Command::ClusterAnchors(a) => commands::cluster_anchors(a),
        Command::Histogram(a) => commands::histogram(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Train(a) => commands::train(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.kind.code())
        }
    }
}
