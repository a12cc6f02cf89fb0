//! The `sensq` command-line tool.
//!
//! Exit codes: 0 on success, 2 for unreadable or invalid input data, 3 for
//! invalid configuration.

pub mod analyze;
pub mod ingest;
pub mod output;
pub mod presets;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sensq_core::SensError;
use thiserror::Error;

pub const EXIT_DATA: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) => EXIT_DATA,
            CliError::Config(_) => EXIT_CONFIG,
        }
    }
}

impl From<SensError> for CliError {
    fn from(e: SensError) -> Self {
        match e {
            SensError::EngineMismatch(_)
            | SensError::InvalidParameter(_)
            | SensError::KOutOfRange { .. }
            | SensError::SupportTooLarge { .. }
            | SensError::DegenerateScale => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ingest::IngestError> for CliError {
    fn from(e: ingest::IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}

pub(crate) fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("cannot write {}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "sensq", version, about = "Sensitivity analysis for quantiles of hidden biases in matched studies")]
pub struct Cli {
    /// Worker threads (default: available parallelism)
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lower confidence limits for every quantile of the hidden biases
    Analyze(AnalyzeArgs),
    /// Run a preset simulation study and write its result tables
    Simulate(SimulateArgs),
    /// Recompute the summary of a saved curve.json
    Summarize(SummarizeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StatisticArg {
    DiffMeans,
    Mstat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    /// Pair engine when every set is a pair and --exact is given, else asymptotic
    Auto,
    PairExact,
    SetAsymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TailArg {
    MonteCarlo,
    Convolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NullArg {
    Sharp,
    BoundedAbove,
    BoundedBelow,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Input CSV with columns set_id,treated,outcome[,delta]
    #[arg(long, required_unless_present = "nhanes", conflicts_with = "nhanes")]
    pub input: Option<PathBuf>,

    /// A user-supplied NHANES extract in the same CSV schema
    #[arg(long)]
    pub nhanes: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = StatisticArg::DiffMeans)]
    pub statistic: StatisticArg,

    /// Outer truncation of the m-statistic ("inf" for none)
    #[arg(long, default_value = "3")]
    pub kappa: String,

    /// Inner trimming of the m-statistic
    #[arg(long, default_value_t = 0.0)]
    pub iota: f64,

    #[arg(long, value_enum, default_value_t = EngineArg::Auto)]
    pub engine: EngineArg,

    /// Request the finite-sample pair analysis under the auto engine
    #[arg(long)]
    pub exact: bool,

    /// Tail computation of the pair engine
    #[arg(long, value_enum, default_value_t = TailArg::MonteCarlo)]
    pub tail: TailArg,

    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,

    /// "all", "start:stop:step" or a comma-separated list of fractions in (0, 1]
    #[arg(long, default_value = "all")]
    pub quantiles: String,

    /// Monte-Carlo draws of the pair engine
    #[arg(long, default_value_t = 100_000)]
    pub draws: usize,

    #[arg(long, env = "SENSQ_SEED", default_value_t = 1)]
    pub seed: u64,

    /// Absolute tolerance of the bisection
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,

    /// Report p = 1 above this bound
    #[arg(long)]
    pub gamma_max: Option<f64>,

    /// Report p = 1 below this k
    #[arg(long)]
    pub k_min: Option<usize>,

    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,

    #[arg(long = "null", value_enum, default_value_t = NullArg::Sharp)]
    pub null: NullArg,

    /// Constant hypothesized effect (instead of a delta column)
    #[arg(long)]
    pub delta: Option<f64>,

    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,

    /// Bias values at which exceedance counts are reported
    #[arg(long, value_delimiter = ',', default_value = "1,1.5,2,3,5,10")]
    pub gamma_grid: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// figA1a-f, figA2a-f, figA3a-c, tabA2, figA4 or figA6
    #[arg(long)]
    pub preset: String,

    #[arg(long)]
    pub reps: Option<usize>,

    #[arg(long)]
    pub n_sets: Option<usize>,

    #[arg(long, env = "SENSQ_SEED", default_value_t = 1)]
    pub seed: u64,

    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub curve: PathBuf,

    #[arg(long, value_delimiter = ',', default_value = "1,1.5,2,3,5,10")]
    pub gamma_grid: Vec<f64>,
}

/// Parses arguments and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return EXIT_CONFIG;
        }
        // fails only if a pool already exists, in which case it is reused
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let result = match &cli.command {
        Command::Analyze(a) => analyze::run(a),
        Command::Simulate(s) => presets::run(s),
        Command::Summarize(s) => analyze::summarize_file(s),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
