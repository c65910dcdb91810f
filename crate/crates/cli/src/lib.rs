//! `srus`: simulate, reconstruct and score sparse-array PA/US acquisitions.
//!
//! The binary is a thin wrapper over [`main_from`].

mod commands;
mod config;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use srus_core::{ErrorClass, Result};

use commands::{DasArgs, ReconstructArgs, RerunArgs, SimulateArgs, SweepArgs, SynthPsfArgs};

#[derive(Debug, Parser)]
#[command(name = "srus", version, about)]
struct Cli {
    /// Worker threads; outputs do not depend on it
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the calibration PSF of a single point source
    SynthPsf(SynthPsfArgs),
    /// Simulate an RF frame of a point-source scene
    Simulate(SimulateArgs),
    /// Sparse reconstruction from a PSF and a data frame
    Reconstruct(ReconstructArgs),
    /// Delay-and-sum baseline image
    Das(DasArgs),
    /// Correlation sweep over element counts and SNRs
    Sweep(SweepArgs),
    /// Repeat a run recorded in a manifest
    Rerun(RerunArgs),
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| srus_core::Error::InvalidInput(format!("--jobs: {e}")))?;
    }
    match cli.command {
        Command::SynthPsf(a) => {
            let (cfg, _) = config::resolve(a.config.as_deref(), "synth-psf")?;
            commands::synth_psf_cmd(&a, cfg)?;
        }
        Command::Simulate(a) => {
            let (cfg, _) = config::resolve(a.config.as_deref(), "simulate")?;
            commands::simulate_cmd(&a, cfg)?;
        }
        Command::Reconstruct(a) => {
            let (cfg, _) = config::resolve(a.config.as_deref(), "reconstruct")?;
            commands::reconstruct_cmd(&a, cfg)?;
        }
        Command::Das(a) => {
            let (cfg, _) = config::resolve(a.config.as_deref(), "das")?;
            commands::das_cmd(&a, cfg)?;
        }
        Command::Sweep(a) => {
            let (cfg, _) = config::resolve(a.config.as_deref(), "sweep")?;
            commands::sweep_cmd(&a, cfg)?;
        }
        Command::Rerun(a) => {
            commands::rerun_cmd(&a)?;
        }
    }
    Ok(())
}

/// Parse `args` (program name first) and run the command, mapping errors to exit codes.
pub fn main_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Input => 2,
                ErrorClass::Consistency => 3,
                ErrorClass::Numerical => 4,
            })
        }
    }
}
