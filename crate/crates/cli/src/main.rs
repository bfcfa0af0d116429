//! `latent-clan`: train, sample, estimate masks, edit, evaluate and serve.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<latent_clan::Error> for CliError {
    fn from(e: latent_clan::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "latent-clan",
    version,
    about = "Text-guided latent editing over a synthetic face generator"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON file with world, schedule, train, sample, mask, mask_mode, edit, invert and ablation sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted override such as `train.steps=2000`; the value is parsed as JSON.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,
    /// Seed for every randomized stage except the world itself.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Checkpoint to load.
    #[arg(long, global = true, default_value = "default.ckpt")]
    pub ckpt: PathBuf,
    /// World file written by `world init`; built from the config when absent.
    #[arg(long, global = true)]
    pub world: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Repeat for more progress output on stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MaskMethodArg {
    Eps,
    W,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Json,
    Text,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// World generation.
    World {
        #[command(subcommand)]
        action: WorldAction,
    },
    /// Train the denoiser and write a checkpoint (to --out, else --ckpt).
    Train,
    /// Draw latents for a prompt.
    Sample {
        #[arg(long)]
        prompt: Option<String>,
        #[arg(short, long, default_value_t = 1)]
        n: usize,
        #[arg(long)]
        guidance: Option<f64>,
    },
    /// Estimate a latent mask from a source and target prompt.
    Mask {
        #[arg(long)]
        src: String,
        #[arg(long)]
        tgt: String,
        #[arg(long, conflicts_with = "threshold")]
        topk: Option<usize>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, value_enum, default_value_t = MaskMethodArg::Eps)]
        method: MaskMethodArg,
    },
    /// Masked denoising edit of an identity toward a prompt.
    Edit {
        #[arg(long, required_unless_present = "latent", conflicts_with = "latent")]
        identity_seed: Option<u64>,
        /// JSON latent: an array, or an object with a `w` field.
        #[arg(long)]
        latent: Option<PathBuf>,
        #[arg(long)]
        prompt: String,
        /// Mask JSON from `mask`, or a bare array of flags.
        #[arg(long)]
        mask_file: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        tprime: Option<f64>,
        #[arg(long)]
        guidance: Option<f64>,
    },
    /// Closed-form latent for target attributes.
    Invert {
        /// Comma-separated attribute values or a JSON array.
        #[arg(long)]
        attrs: String,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Evaluation reports.
    Eval {
        #[command(subcommand)]
        action: EvalAction,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
    /// Render attribute values to an SVG face.
    Render {
        #[arg(long)]
        attrs: String,
        #[arg(long, default_value_t = latent_clan::toy_world::DEFAULT_FACE_SIZE)]
        size: u32,
    },
}

#[derive(Debug, Subcommand)]
pub enum WorldAction {
    /// Write the world built from the config.
    Init,
}

#[derive(Debug, Subcommand)]
pub enum EvalAction {
    /// Ablation table over mask variants.
    Table {
        #[arg(long, value_enum, default_value_t = TableFormat::Json)]
        format: TableFormat,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("LATENT_CLAN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Usage(format!(
            "LATENT_CLAN_THREADS={raw:?} is not a positive integer"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match configure_threads().and_then(|_| commands::run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
