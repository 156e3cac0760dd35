use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lpc_core::config::ExperimentConfig;
use lpc_core::experiment::{
    bench_solvers, compare_tracking, riccati_for, riccati_report, run_experiment, write_tables,
};
use lpc_core::LpcError;

/// Learning-based predictive control experiments.
///
/// Exit codes: 0 success, 1 config error, 2 divergence or numerical
/// failure, 3 I/O error.
#[derive(Parser)]
#[command(name = "lpc", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Closed-loop run; writes trajectory, weights and iteration CSVs.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// OCP versus gradient descent iteration counts.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// LPC versus PID on the tracking task.
    Track {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prints the finite-horizon Riccati P and K.
    Riccati {
        #[arg(long)]
        config: PathBuf,
    },
}

fn exit_code(err: &LpcError) -> u8 {
    match err {
        LpcError::Config { .. }
        | LpcError::UnknownPlant(_)
        | LpcError::UnknownPreset(_)
        | LpcError::InvalidArgument(_) => 1,
        LpcError::Io(_) => 3,
        _ => 2,
    }
}

fn load(path: &Path) -> Result<ExperimentConfig, LpcError> {
    ExperimentConfig::from_file(path)
}

fn execute(cmd: Cmd) -> Result<(), LpcError> {
    match cmd {
        Cmd::Run { config, out } => {
            let cfg = load(&config)?;
            let (log, tables) = run_experiment(&cfg)?;
            write_tables(&out, &tables)?;
            println!(
                "{} steps, total cost {:.6}, wrote {}",
                log.inputs.len(),
                log.total_cost,
                out.display()
            );
        }
        Cmd::Bench {
            config,
            trials,
            out,
        } => {
            let cfg = load(&config)?;
            let (rows, table) = bench_solvers(&cfg, trials)?;
            write_tables(&out, &[table])?;
            for r in rows {
                println!(
                    "{} {}: {:.1} iterations, {:.6} s per horizon",
                    r.system,
                    r.solver.as_str(),
                    r.mean_iterations,
                    r.mean_runtime_s
                );
            }
        }
        Cmd::Track { config, out } => {
            let cfg = load(&config)?;
            let (cmp, tables) = compare_tracking(&cfg)?;
            write_tables(&out, &tables)?;
            let from = cfg.steps.min(30);
            let (lpc, pid) = cmp.max_error_from(from)?;
            println!("max tracking error from k = {from}: lpc {lpc:.4}, pid {pid:.4}");
        }
        Cmd::Riccati { config } => {
            let cfg = load(&config)?;
            print!("{}", riccati_report(&riccati_for(&cfg)?));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("lpc: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
