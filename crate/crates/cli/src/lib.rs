//! The `rlpm` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or model error, 3 numerics
//! error. Every run logs its fully resolved configuration as one JSON line
//! on standard error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod imageio;
pub mod mapcsv;

use imageio::ImageFormat;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Core(rlpm_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(rlpm_core::Error::Numerics { .. }) => 3,
            CliError::Data(_) | CliError::Core(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "error: {m}"),
            CliError::Core(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<rlpm_core::Error> for CliError {
    fn from(e: rlpm_core::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "rlpm", version, about = "Relevance propagation for ReLU image classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print class probabilities as CSV.
    Infer(InferArgs),
    /// Write a relevance map for one class.
    Explain(ExplainArgs),
    /// Pixel-flipping curve and AUC for a relevance map.
    Flip(FlipArgs),
    /// Mean pixel-flipping AUC per rule over a directory of images.
    Compare(CompareArgs),
    /// Activation-maximisation prototype for one class.
    Prototype(PrototypeArgs),
    /// Turn a patch classifier into a whole-image classifier.
    Convert(ConvertArgs),
    /// Check a model file and describe it.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct ImageArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Defaults to pgm for `.pgm` files and raw32 otherwise.
    #[arg(long, value_enum)]
    pub format: Option<ImageFormat>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub input: ImageArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RuleName {
    Lrp0,
    LrpEps,
    Zplus,
    Zb,
    Wsquare,
    DeepTaylor,
    Gxi,
}

#[derive(Debug, Args)]
pub struct RuleArgs {
    /// Stabiliser for lrp-eps.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Input value range `LO,HI` for zb and bounded deep-taylor.
    #[arg(long, allow_hyphen_values = true)]
    pub bounds: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub input: ImageArgs,
    #[arg(long)]
    pub class: usize,
    #[arg(long, value_enum)]
    pub rule: RuleName,
    #[command(flatten)]
    pub rule_args: RuleArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Rendered heatmap (binary PPM).
    #[arg(long)]
    pub png_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyName {
    Zero,
    Mean,
}

#[derive(Debug, Args)]
pub struct FlipArgs {
    #[command(flatten)]
    pub input: ImageArgs,
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long, value_enum, default_value = "zero")]
    pub policy: PolicyName,
    #[arg(long, default_value_t = rlpm_core::saliency::DEFAULT_BATCH_FRACTION)]
    pub batch: f64,
    /// Class whose score is tracked; defaults to the predicted class.
    #[arg(long)]
    pub class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of `.pgm` and `.raw32` images.
    #[arg(long)]
    pub images: PathBuf,
    /// Comma-separated rule names; a seeded random baseline is always added.
    #[arg(long)]
    pub rules: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "zero")]
    pub policy: PolicyName,
    #[arg(long, default_value_t = rlpm_core::saliency::DEFAULT_BATCH_FRACTION)]
    pub batch: f64,
    #[command(flatten)]
    pub rule_args: RuleArgs,
}

#[derive(Debug, Args)]
pub struct PrototypeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub class: usize,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long)]
    pub steps: usize,
    #[arg(long)]
    pub step_size: f64,
    /// Start from seeded Gaussian noise instead of zeros.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Standard deviation of the seeded start.
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub patch_model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub pool: usize,
    /// Hidden layer widths, comma-separated.
    #[arg(long, default_value = "64")]
    pub hidden: String,
    /// Whole-image size `ROWSxCOLS`, rounded down to the patch stride;
    /// defaults to four patches across.
    #[arg(long)]
    pub image: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub model: PathBuf,
}

/// Parses `argv` and runs the command, writing results to `out` and the
/// configuration log and errors to `err`. Returns the exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    let _ = write!(err, "{e}");
                    1
                }
            };
        }
    };
    match commands::dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            e.exit_code()
        }
    }
}
