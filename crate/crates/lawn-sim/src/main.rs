//! Command-line entry point. Every experiment is a config file plus a seed;
//! rerunning a command with the same config and seed reproduces its output
//! byte for byte.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lawn_sim::capacity::run_capacity_sweep;
use lawn_sim::config::SimConfig;
use lawn_sim::control_run::run_control_sim;
use lawn_sim::corridor_run::run_corridor_demo;
use lawn_sim::error::SimError;
use lawn_sim::report::run_report;

#[derive(Parser)]
#[command(name = "lawn-sim", version, about = "LAWN airspace and link simulation harness")]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the config's replicate count (capacity-sweep, control-sim).
    #[arg(long, global = true)]
    replicates: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep per-UAV spectral efficiency over load and SNR.
    CapacitySweep,
    /// Simulate the sensing-control loop over link SINR operating points.
    ControlSim,
    /// Build corridors and replay flight requests through admission control.
    CorridorDemo,
    /// Audit a finished run's artifacts and checks.
    Report,
}

fn load_config(cli: &Cli) -> Result<SimConfig, SimError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| SimError::Validation("--config is required".into()))?;
    let mut config = SimConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = Some(out.clone());
    }
    Ok(config)
}

fn out_dir(config: &SimConfig) -> Result<PathBuf, SimError> {
    config
        .out_dir
        .clone()
        .ok_or_else(|| SimError::Validation("no output directory: set out_dir or pass --out".into()))
}

fn run(cli: &Cli) -> Result<(), SimError> {
    match cli.command {
        Command::CapacitySweep => {
            let config = load_config(cli)?;
            run_capacity_sweep(&config, &out_dir(&config)?, cli.replicates)?;
        }
        Command::ControlSim => {
            let config = load_config(cli)?;
            run_control_sim(&config, &out_dir(&config)?, cli.replicates)?;
        }
        Command::CorridorDemo => {
            let config = load_config(cli)?;
            run_corridor_demo(&config, &out_dir(&config)?)?;
        }
        Command::Report => {
            // Report takes the run directory; a config is only needed to
            // locate it when --out is absent.
            let dir = match &cli.out {
                Some(out) => out.clone(),
                None => out_dir(&load_config(cli)?)?,
            };
            run_report(&dir)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // The exit code is the contract; a closed stderr must not turn
            // it into a panic.
            let _ = writeln!(std::io::stderr(), "error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
