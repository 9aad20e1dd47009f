//! `reefgrad` command-line front end.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use reefgrad_core::data::{FlickrError, HttpTransport, Label};
use reefgrad_core::train::TrainError;

pub mod commands;
pub mod config;
pub mod transport;

pub use config::{ModelChoice, RunConfig};
pub use transport::UreqTransport;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CREDENTIALS: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "reefgrad", version, about = "Coral bleaching classification with residual CNNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Download coral photos from Flickr into <out>/bleached and <out>/healthy.
    Fetch(FetchArgs),
    /// Resize (and optionally sharpen) a raw dataset into a prepared tree with a manifest.
    Prepare(PrepareArgs),
    /// Train one model and evaluate it on the validation split.
    Train(RunArgs),
    /// Score a checkpoint on a dataset split.
    Evaluate(EvaluateArgs),
    /// Write Grad-CAM overlays for images.
    Explain(ExplainArgs),
    /// Train and score the five-model comparison on one shared split.
    Compare(RunArgs),
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    /// Destination dataset root.
    #[arg(long)]
    pub out: PathBuf,
    /// Flickr API key (falls back to FLICKR_API_KEY).
    #[arg(long)]
    pub api_key: Option<String>,
    /// Photos per class.
    #[arg(long, default_value_t = 500)]
    pub count: usize,
    /// Fetch only this class.
    #[arg(long, value_parser = |s: &str| s.parse::<Label>().map_err(|e| e.to_string()))]
    pub class: Option<Label>,
    #[arg(long, default_value = "bleached coral")]
    pub bleached_query: String,
    #[arg(long, default_value = "healthy coral reef")]
    pub healthy_query: String,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Raw dataset root with bleached/ and healthy/.
    #[arg(long)]
    pub data: PathBuf,
    /// Prepared dataset root.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub sharpen: bool,
    #[arg(long, default_value_t = reefgrad_core::data::DEFAULT_MAX_DIM)]
    pub max_dim: usize,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON file with flat keys mirroring the flags.
    /// JSON file with flat keys mirroring the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Continue from an existing checkpoint (train only).
    #[arg(long)]
    pub resume: bool,
    #[command(flatten)]
    pub run: RunConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum Subset {
    #[default]
    Val,
    Train,
    All,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSON file with flat keys mirroring the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Which part of the split to score.
    #[arg(long, value_enum, default_value_t = Subset::Val)]
    pub subset: Subset,
    #[command(flatten)]
    pub run: RunConfig,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// JSON file with flat keys mirroring the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Heatmap opacity in the overlay.
    #[arg(long, default_value_t = reefgrad_core::gradcam::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[command(flatten)]
    pub run: RunConfig,
    /// Images to explain.
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

/// Exit status for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(TrainError::Divergence { .. }) = cause.downcast_ref::<TrainError>() {
            return EXIT_DIVERGENCE;
        }
        if let Some(FlickrError::MissingKey | FlickrError::Auth { .. }) = cause.downcast_ref::<FlickrError>() {
            return EXIT_CREDENTIALS;
        }
    }
    EXIT_FAILURE
}

pub fn execute(cli: Cli, transport: &dyn HttpTransport) -> anyhow::Result<()> {
    match cli.command {
        Command::Fetch(a) => commands::fetch(&a, transport),
        Command::Prepare(a) => commands::prepare(&a),
        Command::Train(a) => commands::train(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Explain(a) => commands::explain(&a),
        Command::Compare(a) => commands::compare(&a),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit status.
pub fn run_with<I, S>(args: I, transport: &dyn HttpTransport) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_FAILURE } else { EXIT_OK };
        }
    };
    match execute(cli, transport) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
