use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use spikelab::{run, Task};

/// Spike-layer prediction and energy-expansion checks for singularly perturbed Neumann problems.
#[derive(Debug, Parser)]
#[command(name = "spikelab", version)]
struct Args {
    /// ground-state, constants, landscape, predict, verify-expansion, verify-proposition or
    /// verify-gradient; defaults to the config's `task`
    task: Option<Task>,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed (overrides the config's `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> anyhow::Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match run(args.task, &args.config, args.out.as_deref(), args.seed) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Ok(ExitCode::from(e.exit_code() as u8))
        }
    }
}
