//! `vjump`: experiment recipes for the three-state velocity-jump toolkit.
//!
//! Exit codes: 0 success, 2 configuration or validation error,
//! 3 estimation failure, 4 equivalence search could not certify completeness.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "vjump",
    version,
    about = "Velocity-jump simulation, densities and identifiability"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Model description (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "vjump-out")]
    pub out: PathBuf,
}

#[derive(Args, Clone)]
pub struct GridArgs {
    #[arg(long, value_enum, default_value_t = Solver::Spectral)]
    pub solver: Solver,
    #[arg(long, default_value_t = 0.01)]
    pub dx: f64,
    #[arg(long, default_value_t = 0.00045)]
    pub dt: f64,
    #[arg(long = "t-final", default_value_t = 0.5)]
    pub t_final: f64,
    /// Snapshot times, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub snapshots: Option<Vec<f64>>,
    /// Fourier modes of the spectral solver (power of two, at least 256).
    #[arg(long, default_value_t = 256)]
    pub modes: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Solver {
    Upwind,
    Spectral,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an ensemble, write trajectories.csv and estimate.json.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        trajectories: usize,
        #[arg(long, default_value_t = 50.0)]
        horizon: f64,
    },
    /// Solve the density equations, write density.csv and density.json.
    Density {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Enumerate parameter sets with the same densities, write equivalence.json and equivalence_trace.csv.
    Equivalents {
        #[command(flatten)]
        common: Common,
        #[arg(long = "t-final", default_value_t = 0.5)]
        t_final: f64,
        #[arg(long, default_value_t = 256)]
        modes: usize,
    },
    /// Compare the total densities of two models, write compare.csv.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Second model description.
        #[arg(long)]
        other: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Identifiable coefficient combinations, write coeffs.json.
    Coeffs {
        #[command(flatten)]
        common: Common,
    },
    /// det F against its small-t asymptote, write fmatrix.csv.
    Fmatrix {
        #[command(flatten)]
        common: Common,
        /// Times t, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.01,0.001,0.0001")]
        snapshots: Vec<f64>,
    },
    /// Fit the merged-dwell law to simulated excursions, write dwell_fit.json and dwell_fit.csv.
    DwellFit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        /// Number of simulated excursions.
        #[arg(long, default_value_t = 100_000)]
        trajectories: usize,
    },
}

fn configure_threads() -> Result<(), commands::Failure> {
    let Some(value) = std::env::var_os("VJUMP_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .to_str()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            commands::Failure::config(anyhow::anyhow!(
                "VJUMP_THREADS must be a positive integer, got {value:?}"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| commands::Failure::config(e.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Simulate {
            common,
            seed,
            trajectories,
            horizon,
        } => commands::simulate(&common, seed, trajectories, horizon),
        Command::Density { common, grid } => commands::density(&common, &grid),
        Command::Equivalents {
            common,
            t_final,
            modes,
        } => commands::equivalents(&common, t_final, modes),
        Command::Compare {
            common,
            other,
            grid,
        } => commands::compare(&common, &other, &grid),
        Command::Coeffs { common } => commands::coeffs(&common),
        Command::Fmatrix { common, snapshots } => commands::fmatrix(&common, &snapshots),
        Command::DwellFit {
            common,
            seed,
            trajectories,
        } => commands::dwell_fit(&common, seed, trajectories),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
