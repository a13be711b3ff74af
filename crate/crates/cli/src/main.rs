mod commands;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] facedit_core::Error),
    #[error("refusing to overwrite existing files without --force: {}", display_paths(.0))]
    Refused(Vec<PathBuf>),
    #[error("empty composition: pass at least one --checkpoint")]
    EmptyComposition,
    #[error("{0}")]
    Usage(String),
    #[error("checksum mismatch for {}", .0.join(", "))]
    Checksum(Vec<String>),
}

fn display_paths(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Core(facedit_core::Error::Io { path: path.to_path_buf(), source })
    }

    pub fn exit_code(&self) -> u8 {
        use facedit_core::Error as E;
        match self {
            CliError::Core(E::NumericAbort { .. }) => 3,
            CliError::Core(E::Io { .. }) | CliError::Checksum(_) => 4,
            _ => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "facedit", version, about = "Text-guided facial expression editing on a desk-scale face model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize the face model, surrogate networks, embedding fixture and AU rules.
    Init(InitArgs),
    /// Train a mapper for one expression.
    Fit(FitArgs),
    /// Write before/after meshes and images for one latent draw.
    Render(RenderArgs),
    /// AU accuracy, identity loss and CLIP score over an evaluation batch.
    Eval(EvalArgs),
    /// Train and evaluate across a list of lambda_id values.
    Sweep(SweepArgs),
    /// Apply several trained mappers in sequence.
    Compose(ComposeArgs),
    /// Recompute the checksums recorded in a run manifest.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct OutArgs {
    /// Output directory, created when missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overwrite existing output files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct InitArgs {
    /// Desk configuration JSON (dimensions and seed).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutArgs,
}

/// Training options; flags override the config file, which overrides defaults.
#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory written by `init`.
    #[arg(long)]
    pub scene: PathBuf,
    /// Training configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub expression: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Start from a neutral expression code instead of the reference one.
    #[arg(long)]
    pub no_ref: bool,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Seed of the latent draw.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Image width and height in pixels.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Checkpoints applied in the given order.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    /// Expressions to score; defaults to those of the checkpoints.
    #[arg(long)]
    pub expression: Vec<String>,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Seed of the evaluation batch.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// lambda_id values, comma separated. Defaults to 0.05,0.10,...,0.30.
    #[arg(long, value_delimiter = ',')]
    pub lambda: Vec<f64>,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 1)]
    pub eval_seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct ComposeArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Checkpoints applied in the given order.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    pub manifest: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Init(a) => commands::init(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Render(a) => commands::render(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Compose(a) => commands::compose(&a),
        Command::Verify(a) => commands::verify(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
