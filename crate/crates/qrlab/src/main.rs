use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use qrlab::{execute, Experiment, ExperimentConfig, RunError};

/// Conformal-geometry experiments on zonal spherical grids.
#[derive(Debug, Parser)]
#[command(name = "qrlab", version)]
struct Cli {
    /// Experiment name, or `list`.
    experiment: String,
    /// JSON object or `key = value` file; omitted keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Payload path; overrides `output_path`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn list() {
    for e in Experiment::ALL {
        println!("{:<18} {}", e.name(), e.summary());
    }
}

fn run(cli: &Cli) -> Result<(), RunError> {
    let experiment: Experiment = cli.experiment.parse()?;
    let mut cfg = match &cli.config {
        Some(path) => qrlab::config::load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if cli.out.is_some() {
        cfg.output_path = cli.out.clone();
    }
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    let resolved = cfg.resolve(experiment)?;
    let (_, artifacts) = execute(&resolved)?;
    println!("{}", artifacts.payload.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.experiment == "list" {
        list();
        return ExitCode::SUCCESS;
    }
    match run(&cli).with_context(|| format!("qrlab {}", cli.experiment)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<RunError>().map_or(1, RunError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
