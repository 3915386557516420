//! Command-line entry point: `xbandloc <generate|estimate|reconstruct|localize>`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use xbandloc::cli::{run, ExperimentConfig, ExperimentKind};

#[derive(Parser)]
#[command(name = "xbandloc", version, about = "Multi-band CSI estimation, reconstruction and localization experiments")]
struct Args {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: the config's output_dir, else out/<subcommand>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Falls back to the config's `experiment` field when omitted.
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write a synthetic multi-band dataset.
    Generate,
    /// Compare MUSIC, SAGE, PSO and CMA-ES parameter estimation.
    Estimate,
    /// Cross-band reconstruction under several test speeds.
    Reconstruct,
    /// Fingerprint localization with spliced multi-band features.
    Localize,
}

impl From<Command> for ExperimentKind {
    fn from(c: Command) -> Self {
        match c {
            Command::Generate => Self::Generate,
            Command::Estimate => Self::Estimate,
            Command::Reconstruct => Self::Reconstruct,
            Command::Localize => Self::Localize,
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut config = match &args.config {
        Some(path) => match ExperimentConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: [config] {e}");
                return ExitCode::from(2);
            }
        },
        None => ExperimentConfig::default(),
    };
    let Some(kind) = args.command.map(ExperimentKind::from).or(config.experiment) else {
        eprintln!("error: [config] no subcommand given and the config sets no experiment");
        return ExitCode::from(2);
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = args
        .out
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(kind.name()));
    match run(kind, &config, &out) {
        Ok(manifest) => {
            println!(
                "{}: {} files in {} (config sha256 {})",
                kind.name(),
                manifest.outputs.len(),
                out.display(),
                manifest.config_sha256
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
