//! `uwsim` command-line front end.
//!
//! Exit codes: 0 success, 1 check failure, 2 I/O error, 3 validation error,
//! 4 numeric abort.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "uwsim",
    version,
    about = "Underwater image synthesis, fitting and evaluation"
)]
pub struct Cli {
    /// JSON run configuration with optional "fit", "metrics", "grid" and
    /// "seed" entries; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output path (file or directory, depending on the subcommand).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render an underwater image from an in-air RGB-D pair.
    Synthesize(SynthesizeArgs),
    /// Estimate physical parameters from paired images.
    Fit(FitArgs),
    /// Score a directory of images, optionally against references.
    Evaluate(EvaluateArgs),
    /// Evaluate a detection loss on a scene file.
    Detloss(DetlossArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub rgb: PathBuf,
    #[arg(long)]
    pub depth: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub aux: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// JSON manifest listing rgb/depth/target triples.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Initial parameters.
    #[arg(long)]
    pub init: PathBuf,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub decay_start: Option<usize>,
    #[arg(long)]
    pub w2: Option<f64>,
    /// Let clamped output samples contribute gradient.
    #[arg(long)]
    pub no_saturation_mask: bool,
    /// Update the fusion filter as well.
    #[arg(long)]
    pub learn_fusion: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub images: PathBuf,
    /// Directory holding references with the same file names.
    #[arg(long)]
    pub refs: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Variant {
    Patch,
    ObjectFocused,
}

#[derive(Debug, Args)]
pub struct DetlossArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, value_enum, default_value = "object-focused")]
    pub variant: Variant,
    /// Comma-separated layer grid sizes, e.g. `2,1`.
    #[arg(long, value_delimiter = ',')]
    pub grids: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub rgb: PathBuf,
    #[arg(long)]
    pub depth: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub aux: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    pub h: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                commands::EXIT_VALIDATION
            } else {
                0
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
