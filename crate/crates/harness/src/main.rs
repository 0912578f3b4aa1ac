use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vpm_harness::{convergence_study, diagnose, run, Observable, Result, SimConfig};

#[derive(Parser)]
#[command(name = "vpm", version, about = "Variational particle-mesh EPDiff solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation described by a TOML configuration.
    Run {
        config: PathBuf,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Refine a 1D configuration and fit the order of convergence.
    Converge {
        config: PathBuf,
        #[arg(long)]
        observable: Observable,
        /// Grid points per alpha, comma separated.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        resolutions: Vec<f64>,
    },
    /// Re-check a run directory against its snapshots.
    Diagnose { dir: PathBuf },
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let mut cfg = SimConfig::from_file(&config)?;
            if out.is_some() {
                cfg.output.dir = out;
            }
            let output = run(&cfg)?;
            let last = output.samples.last().expect("a run has at least one sample");
            println!(
                "completed {} steps to t = {} in {:.2} s; energy {:.12e}, J^R drift {:.3e}",
                last.step, last.t, output.wall_time_s, last.energy, last.noether_drift
            );
            if let Some(csv) = output.diagnostics_csv {
                println!("diagnostics: {}", csv.display());
            }
        }
        Command::Converge { config, observable, resolutions } => {
            let cfg = SimConfig::from_file(&config)?;
            let table = convergence_study(&cfg, &resolutions, observable)?;
            println!("{table}");
            if !table.monotone {
                eprintln!("warning: error sequence is not monotone");
            }
        }
        Command::Diagnose { dir } => {
            let report = diagnose(&dir)?;
            println!(
                "{} samples; {} energies recomputed (max relative error {:.3e}); {} J^R drifts recomputed (max error {:.3e})",
                report.samples, report.energies_checked, report.max_energy_error, report.noether_checked, report.max_noether_error
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
