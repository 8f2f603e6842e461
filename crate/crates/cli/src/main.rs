//! `sievelab` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sievelab::filter::RoiScheme;
use sievelab::model::{Grouping, Variant};

mod commands;
mod plot;
mod tables;

#[derive(Parser, Debug)]
#[command(name = "sievelab", version, about = "Subgroup perturbation-robustness analysis for human and machine readers")]
struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory. It is written atomically and replaced if it exists.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Low-pass filter a directory of images at one severity.
    Filter(FilterArgs),
    /// Run a synthetic recovery experiment from a config file.
    Simulate(SimulateArgs),
    /// Fit Dirichlet calibrators to machine scores.
    Calibrate(CalibrateArgs),
    /// Fit the latent prediction model by variational inference.
    Fit(FitArgs),
    /// Fit several model variants and rank them by ELBO.
    CompareModels(CompareArgs),
    /// Confidence and separability analysis of a fitted model.
    Analyze(AnalyzeArgs),
    /// Compare per-subgroup and pooled analyses for aggregation reversals.
    Simpsons(SimpsonsArgs),
    /// Run the reader-study HTTP server.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct FilterArgs {
    /// Directory with images.jsonl and one PNG or PGM per image.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    severity_index: usize,
    /// Severity ladder as JSON (default: the built-in nine-level ladder).
    #[arg(long)]
    ladder: Option<PathBuf>,
    #[arg(long, default_value = "full")]
    scheme: RoiScheme,
    /// ROI annotations, required for the interior and exterior schemes.
    #[arg(long)]
    rois: Option<PathBuf>,
    /// Also write the run manifest to this path.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    /// Validation predictions; only machine records are used.
    #[arg(long)]
    val: PathBuf,
    /// Cases with ground-truth labels.
    #[arg(long)]
    labels: PathBuf,
    /// Severity whose records are used for fitting.
    #[arg(long, default_value_t = 0)]
    severity: usize,
    /// One calibrator for all machine readers instead of one per reader.
    #[arg(long)]
    pooled: bool,
    /// Predictions to recalibrate with the fitted maps.
    #[arg(long)]
    apply: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Predictions as JSON lines.
    #[arg(long)]
    data: PathBuf,
    /// Cases as JSON lines.
    #[arg(long)]
    cases: PathBuf,
    /// Severity ladder as JSON (default: the halving ladder sized to the data).
    #[arg(long)]
    ladder: Option<PathBuf>,
    #[arg(long, default_value = "subgroups", value_parser = parse_grouping)]
    grouping: Grouping,
    /// Drop the identifiability constraints on γ and ν.
    #[arg(long)]
    unconstrained: bool,
    /// Optimizer settings as JSON.
    #[arg(long)]
    advi: Option<PathBuf>,
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long, default_value = "full")]
    model: Variant,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Comma-separated variants (default: all).
    #[arg(long, value_delimiter = ',')]
    models: Vec<Variant>,
    #[arg(long, default_value_t = 1000)]
    mc_samples: usize,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    posterior: PathBuf,
    /// Model spec written by `fit`.
    #[arg(long)]
    spec: PathBuf,
    /// Cases (default: cases.jsonl next to the spec).
    #[arg(long)]
    cases: Option<PathBuf>,
    #[arg(long, default_value_t = sievelab::analysis::DEFAULT_REPLICATES)]
    replicates: usize,
    #[arg(long, default_value_t = sievelab::analysis::DEFAULT_ALPHA)]
    alpha: f64,
}

#[derive(Args, Debug)]
struct SimpsonsArgs {
    /// report.json from a per-subgroup analysis.
    #[arg(long)]
    subgroups: PathBuf,
    /// report.json from a pooled analysis.
    #[arg(long)]
    pooled: PathBuf,
    #[arg(long, default_value_t = sievelab::analysis::DEFAULT_ALPHA)]
    alpha: f64,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// Directory holding study logs (default: --out).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Image library directory.
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// Admin token; falls back to SIEVELAB_ADMIN_TOKEN.
    #[arg(long)]
    admin_token: Option<String>,
}

fn parse_grouping(s: &str) -> Result<Grouping, String> {
    match s {
        "subgroups" => Ok(Grouping::Subgroups),
        "pooled" => Ok(Grouping::Pooled),
        other => Err(format!("unknown grouping {other:?}, expected subgroups or pooled")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return commands::report_error(&commands::CliError::Usage(e.to_string()));
        }
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::CliError::Usage(msg)) => {
            use clap::CommandFactory;
            Cli::command().error(clap::error::ErrorKind::MissingRequiredArgument, msg).exit()
        }
        Err(e) => commands::report_error(&e),
    }
}
