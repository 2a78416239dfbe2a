//! `t3s` command-line entry point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Environment variable that overrides the default output directory.
pub const OUT_DIR_ENV: &str = "T3S_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "t3s",
    version,
    about = "Thermal-time sampling for crop-type time series"
)]
struct Cli {
    /// Seed for every random stream of the run; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for fold-level parallelism. Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthetic dataset generation.
    Synth {
        #[command(subcommand)]
        action: SynthAction,
    },
    /// Print daily and cumulative GDD of a temperature file as CSV.
    Gdd(GddArgs),
    /// Print the observations a sampler picks from a cube as JSON.
    Sample(SampleArgs),
    /// Train a classifier on one or more site-years.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a site-year.
    Eval(EvalArgs),
    /// Run a benchmark protocol over a synthetic dataset.
    Bench(BenchArgs),
    /// Re-render tables and plots from a saved results.json.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
enum SynthAction {
    /// Write one cube directory and one temperature CSV per year.
    Gen(SynthGenArgs),
}

#[derive(Debug, Args)]
struct OutDir {
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ManifestDir {
    /// Directory for the run manifest.
    #[arg(long, env = OUT_DIR_ENV, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthGenArgs {
    /// Benchmark config (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Debug, Args)]
struct GddArgs {
    /// Temperature CSV with header `day_of_year,t_min,t_max`.
    #[arg(long)]
    temps: PathBuf,
    /// Base temperature in degrees Celsius.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    t_base: f64,
    #[command(flatten)]
    out: ManifestDir,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sampler {
    Uniform,
    Deformable,
    T3s,
}

impl From<Sampler> for t3s::sampling::SamplerMethod {
    fn from(s: Sampler) -> Self {
        match s {
            Sampler::Uniform => Self::Uniform,
            Sampler::Deformable => Self::Deformable,
            Sampler::T3s => Self::T3s,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Pe {
    None,
    Linear,
    Calendar,
    Thermal,
}

impl From<Pe> for t3s::model::PeVariant {
    fn from(p: Pe) -> Self {
        match p {
            Pe::None => Self::None,
            Pe::Linear => Self::Linear,
            Pe::Calendar => Self::Calendar,
            Pe::Thermal => Self::Thermal,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Grid {
    Rescale,
    Keep,
}

impl From<Grid> for t3s::bench::TruncationGrid {
    fn from(g: Grid) -> Self {
        match g {
            Grid::Rescale => Self::Rescale,
            Grid::Keep => Self::Keep,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Protocol {
    CrossYear,
    LowData,
    EarlySeason,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long, value_enum)]
    method: Sampler,
    #[arg(long, default_value_t = t3s::sampling::DEFAULT_LENGTH)]
    length: usize,
    /// Cube directory.
    #[arg(long)]
    cube: PathBuf,
    /// Temperature CSV of the cube's year.
    #[arg(long)]
    temps: PathBuf,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    t_base: f64,
    #[command(flatten)]
    out: ManifestDir,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Cube directory; repeat for several site-years.
    #[arg(long, required = true)]
    cube: Vec<PathBuf>,
    /// Temperature CSV, one per `--cube`, in the same order.
    #[arg(long, required = true)]
    temps: Vec<PathBuf>,
    /// Benchmark config (TOML) supplying the `model`, `train` and `dataset.t_base` keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "t3s")]
    sampler: Sampler,
    #[arg(long, value_enum, default_value = "linear")]
    pe: Pe,
    /// Fraction of labeled pixels used for training.
    #[arg(long, default_value_t = 1.0)]
    label_fraction: f64,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    temps: PathBuf,
    /// Benchmark config (TOML) supplying the `eval` and `dataset.t_base` keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults to the sampler the checkpoint was trained with.
    #[arg(long, value_enum)]
    sampler: Option<Sampler>,
    /// Average MC-Dropout members instead of a single deterministic pass.
    #[arg(long)]
    mc_dropout: bool,
    /// Evaluate on observations up to this day of year.
    #[arg(long)]
    cutoff: Option<u32>,
    #[arg(long, value_enum, default_value = "rescale")]
    truncation_grid: Grid,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    protocol: Protocol,
    /// Benchmark config (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `protocol.truncation_grid`.
    #[arg(long, value_enum)]
    truncation_grid: Option<Grid>,
    /// Overrides `protocol.label_fraction` for the low-data protocol.
    #[arg(long)]
    label_fraction: Option<f64>,
    /// Overrides `protocol.cutoffs`; repeat for several days.
    #[arg(long)]
    cutoff: Vec<u32>,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// A results.json written by `bench`.
    #[arg(long)]
    results: PathBuf,
    #[command(flatten)]
    out: OutDir,
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
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut text = e.to_string();
    let mut last = text.clone();
    for cause in e.chain().skip(1) {
        let msg = cause.to_string();
        if !last.contains(&msg) {
            text.push_str(": ");
            text.push_str(&msg);
        }
        last = msg;
    }
    text
}

/// 1 for usage and configuration errors, 2 for bad data.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<t3s::Error>() {
        Some(err) if !err.is_data_error() => 1,
        _ if e.downcast_ref::<commands::UsageError>().is_some() => 1,
        _ => 2,
    }
}
