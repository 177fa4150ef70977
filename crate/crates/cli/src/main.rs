//! `udeer`: batch driver for synthesis, LiDAR adaptation, training,
//! pseudo-labeling, evaluation and visualization.
//!
//! Exit codes: 0 ok, 2 I/O, 3 malformed data, 4 configuration, 5 missing
//! prerequisite artifact.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use commands::Run;
use config::Config;
use error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Synth,
    Adapt,
    Train,
    Pseudo,
    Eval,
    Visualize,
}

#[derive(Debug, Parser)]
#[command(name = "udeer", version, about = "Road segmentation from camera, LiDAR and relative depth")]
struct Args {
    command: Command,
    /// `key = value` run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("UDEER_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("UDEER_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(args: Args) -> CliResult<()> {
    configure_threads()?;
    let mut config = Config::load(&args.config)?;
    if let Some(out) = &args.out {
        config.set("out_dir", out.display().to_string());
    }
    if let Some(seed) = args.seed {
        config.set("seed", seed.to_string());
    }
    let out_dir = config
        .path("out_dir")
        .ok_or_else(|| CliError::Config("no output directory: set `out_dir` or pass --out".into()))?;
    let seed = config.get_or("seed", 0)?;
    let run = Run { config, out_dir, seed };
    match args.command {
        Command::Synth => commands::synth(&run),
        Command::Adapt => commands::adapt_cmd(&run),
        Command::Train => commands::train(&run),
        Command::Pseudo => commands::pseudo(&run),
        Command::Eval => commands::eval(&run),
        Command::Visualize => commands::visualize(&run),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("udeer: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
