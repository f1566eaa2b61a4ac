use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use pseudomode::config::PRESET_PAPER_FIG4;
use pseudomode::{run_command, Command, Error, ExperimentConfig};

/// Pseudo-mode qubit simulations: spectra, master equation, quantum filter.
#[derive(Parser, Debug)]
#[command(name = "pseudomode", version)]
struct Cli {
    /// spectrum | evolve | baseline | filter | ensemble | fit | compare
    command: Command,
    /// Key-value (or JSON) experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in parameter set.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory (default ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "n-traj")]
    n_traj: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => {
            return Err(Error::Config {
                field: "config".into(),
                message: format!("pass --config <path> or --preset {PRESET_PAPER_FIG4}"),
            })
        }
    };
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.base_seed = seed;
    }
    if let Some(n) = cli.n_traj {
        cfg.n_traj = n;
    }
    if let Some(dt) = cli.dt {
        cfg.dt = dt;
    }
    cfg.validate()?;
    for path in run_command(cli.command, &cfg)? {
        println!("{}", path.display());
        if path.file_name().is_some_and(|n| n == "compare_summary.txt") {
            if let Some(line) = std::fs::read_to_string(&path)?.lines().nth(1) {
                println!("{line}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
