use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use capa::cli::{self, Overrides};
use capa::Error;

#[derive(Parser)]
#[command(name = "capa", version, about = "Continuous-aperture array channel toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario document (TOML).
    scenario: PathBuf,
    /// Directory for CSV tables and report.json.
    #[arg(long, default_value = "capa-out")]
    out_dir: PathBuf,
    /// Overrides numerics.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides numerics.quadrature_order.
    #[arg(long)]
    quadrature_order: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run whatever task the scenario defines.
    Run(RunArgs),
    /// Check a scenario and list every problem without running it.
    Validate { scenario: PathBuf },
    /// Degrees-of-freedom sweep over distance.
    Dof(RunArgs),
    /// Water-filling and Kolmogorov capacity.
    Capacity(RunArgs),
    /// Multi-user beamforming.
    Beamform(RunArgs),
    /// Sparse channel estimation.
    Estimate(RunArgs),
    /// Sample a channel kernel in the spatial or wavenumber domain.
    ChannelSample(RunArgs),
    /// Radiation and loss matrices of a pixel port basis.
    Coupling(RunArgs),
    /// Radiated and dissipated power of port currents.
    Power(RunArgs),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::Config(_) => 2,
        Error::Io(_) => 3,
        _ => 1,
    }
}

fn report(e: &Error) {
    match e {
        Error::Validation(list) => {
            eprintln!("error: scenario is invalid ({} problem{})", list.len(), if list.len() == 1 { "" } else { "s" });
            for msg in list {
                eprintln!("  - {msg}");
            }
        }
        other => eprintln!("error: {other}"),
    }
}

fn main() -> ExitCode {
    let args = Cli::parse();
    if let Err(e) = cli::init_threads() {
        report(&e);
        return ExitCode::from(exit_code(&e));
    }
    let (run, task) = match args.command {
        Command::Validate { scenario } => {
            return match cli::parse_scenario(&scenario) {
                Ok(sc) => {
                    println!("ok: task {}", sc.task.name());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    report(&e);
                    ExitCode::from(exit_code(&e))
                }
            };
        }
        Command::Run(a) => (a, None),
        Command::Dof(a) => (a, Some("dof_sweep")),
        Command::Capacity(a) => (a, Some("capacity")),
        Command::Beamform(a) => (a, Some("beamform")),
        Command::Estimate(a) => (a, Some("estimate")),
        Command::ChannelSample(a) => (a, Some("channel_sample")),
        Command::Coupling(a) => (a, Some("coupling")),
        Command::Power(a) => (a, Some("power")),
    };
    let overrides = Overrides { seed: run.seed, quadrature_order: run.quadrature_order };
    match cli::execute(&run.scenario, task, &overrides, &run.out_dir) {
        Ok(rep) => {
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}: wrote {} to {}", rep.task, rep.outputs.join(", "), run.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            report(&e);
            ExitCode::from(exit_code(&e))
        }
    }
}
