//! Command-line front end for the `tkrr` library.
//!
//! Human-readable tables go to standard output, CSV only to files named by
//! flags. Exit codes: 0 success, 2 usage or dimension errors, 3 data errors,
//! 4 numerical failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tkrr::data::{TargetColumn, DEFAULT_MARGIN};
use tkrr::solver::{CacheMode, RegMode};

pub mod commands;
pub mod compare;
mod output;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "tkrr", version, about = "Tensor-network-constrained kernel ridge regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model and write it as JSON.
    Train(TrainArgs),
    /// Write predictions for the rows of a CSV file.
    Predict(PredictArgs),
    /// Report test MSE or misclassification rate of a saved model.
    Eval(EvalArgs),
    /// Measure the deterministic feature approximation of the Gaussian kernel.
    KernelBench(KernelBenchArgs),
    /// Compare T-KRR, random Fourier features and dual KRR over random splits.
    Compare(CompareArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input CSV file.
    #[arg(long)]
    pub data: PathBuf,
    /// Target column: header name or zero-based index. Defaults to the last column.
    #[arg(long)]
    pub target: Option<TargetColumn>,
    /// The file has no header row.
    #[arg(long)]
    pub no_header: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Auto,
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegModeArg {
    FullHadamard,
    DiagonalOnly,
}

impl From<RegModeArg> for RegMode {
    fn from(m: RegModeArg) -> Self {
        match m {
            RegModeArg::FullHadamard => RegMode::FullHadamard,
            RegModeArg::DiagonalOnly => RegMode::DiagonalOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CacheArg {
    Projections,
    Streaming,
}

impl From<CacheArg> for CacheMode {
    fn from(m: CacheArg) -> Self {
        match m {
            CacheArg::Projections => CacheMode::Projections,
            CacheArg::Streaming => CacheMode::Streaming,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LambdaRuleArg {
    /// Use `--lambda` as given.
    Fixed,
    /// `λ = 100 / N`.
    InverseN,
}

/// `auto` or a positive number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lengthscale {
    Auto,
    Value(f64),
}

impl std::str::FromStr for Lengthscale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Self::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Self::Value(v)),
            _ => Err(format!("expected 'auto' or a positive number, got {s:?}")),
        }
    }
}

impl Lengthscale {
    pub fn value(self) -> Option<f64> {
        match self {
            Self::Auto => None,
            Self::Value(v) => Some(v),
        }
    }
}

/// Solver and model settings shared by `train` and `compare`.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "auto")]
    pub task: TaskArg,
    /// Basis functions per input dimension.
    #[arg(long, default_value_t = 10)]
    pub m_hat: usize,
    /// CP rank.
    #[arg(long, default_value_t = 10)]
    pub rank: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value = "fixed")]
    pub lambda_rule: LambdaRuleArg,
    /// Gaussian-kernel lengthscale in scaled-input units, or `auto`.
    #[arg(long, default_value = "auto")]
    pub lengthscale: Lengthscale,
    #[arg(long, default_value_t = 10)]
    pub sweeps: usize,
    #[arg(long, value_enum, default_value = "diagonal-only")]
    pub reg_mode: RegModeArg,
    /// Feature-domain half width is `margin / 2`; must exceed 1.
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub margin: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "projections")]
    pub cache: CacheArg,
    /// Skip the column rebalancing between factor updates.
    #[arg(long)]
    pub no_equilibrate: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Where to write the model JSON.
    #[arg(long)]
    pub output: PathBuf,
    /// Optional loss-trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV of inputs.
    #[arg(long)]
    pub data: PathBuf,
    /// Column to drop before predicting, if the file also holds targets.
    #[arg(long)]
    pub target: Option<TargetColumn>,
    #[arg(long)]
    pub no_header: bool,
    /// Where to write the predictions CSV.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Optional one-row metrics CSV.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct KernelBenchArgs {
    #[arg(long, default_value_t = 0.3)]
    pub lengthscale: f64,
    /// Feature-domain half width `U`; points are drawn from `[-U/2, U/2]`.
    #[arg(long, default_value_t = 1.0)]
    pub half_width: f64,
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32")]
    pub m_hat: Vec<usize>,
    /// Points per axis; `grid²` pairs are evaluated.
    #[arg(long, default_value_t = 100)]
    pub grid: usize,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of random splits.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0.9)]
    pub train_fraction: f64,
    /// Dual KRR is skipped when the training split has more rows.
    #[arg(long, default_value_t = tkrr::baselines::DEFAULT_DUAL_CAP)]
    pub dual_cap: usize,
    /// Optional per-run CSV (seed, method, metric).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Sum of Gaussian bumps on the unit cube (regression).
    Bumps,
    /// Two interleaved crescents in 2-D (labels ±1).
    Banana,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(value_enum)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 1000)]
    pub rows: usize,
    /// Input dimensions (bumps only).
    #[arg(long, default_value_t = 5)]
    pub dims: usize,
    /// Label jitter (banana only).
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

/// Everything that can stop a command.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(tkrr::Error),
    Output(std::io::Error),
}

impl From<tkrr::Error> for CliError {
    fn from(e: tkrr::Error) -> Self {
        Self::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Output(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => f.write_str(m),
            Self::Core(e) => write!(f, "{e}"),
            Self::Output(e) => write!(f, "writing output: {e}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use tkrr::Error as E;
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Output(_) => EXIT_DATA,
            Self::Core(e) => match e {
                E::InvalidParameter(_)
                | E::DimensionMismatch { .. }
                | E::ShapeMismatch(_)
                | E::TaskMismatch { .. }
                | E::Capacity { .. } => EXIT_USAGE,
                E::NumericalFailure { .. } => EXIT_NUMERICAL,
                _ => EXIT_DATA,
            },
        }
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(&cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command, out: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Train(a) => commands::train(a, out),
        Command::Predict(a) => commands::predict(a, out),
        Command::Eval(a) => commands::eval(a, out),
        Command::KernelBench(a) => commands::kernel_bench(a, out),
        Command::Compare(a) => compare::run_compare(a, out),
        Command::Synth(a) => commands::synth(a, out),
    }
}
