//! `ccm`: synthesize contraction metrics, verify them, simulate the
//! resulting feedback loops and emit plot scripts.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 infeasible
//! (or verification failure), 3 solver inconclusive.

mod commands;
mod config;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Mode;

#[derive(Debug, Parser)]
#[command(name = "ccm", version, about = "Contraction metric synthesis and closed-loop simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the controller and observer metric programs.
    Synthesize {
        /// configuration file, or a preset name (mg-slow, mg-medium, mg-fast)
        #[arg(short, long)]
        config: String,
        /// output directory; defaults to the configured one
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Check the metric inequality pointwise on a grid.
    Verify {
        /// metric file or directory holding controller.toml / observer.toml
        #[arg(short, long, required = true, num_args = 1..)]
        metric: Vec<PathBuf>,
        /// box applied to every state axis
        #[arg(long = "box", default_value = "-5:5", allow_hyphen_values = true)]
        bbox: String,
        /// points per axis
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Simulate open loop, state feedback or output feedback.
    Simulate {
        #[arg(short, long)]
        config: String,
        /// directory with metric files; defaults to the configured output directory
        #[arg(short, long)]
        metrics: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Mode,
        /// measurement noise standard deviation (overrides the config)
        #[arg(long)]
        noise: Option<f64>,
        /// noise seed (overrides the config)
        #[arg(long)]
        seed: Option<u64>,
        /// trace path; defaults to <output dir>/trace_<mode>.csv
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Write matplotlib scripts for one or more traces.
    Report {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(short, long, default_value = "plots")]
        out: PathBuf,
    },
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
    let result = match cli.command {
        Command::Synthesize { config, out } => commands::synthesize_cmd(&config, out),
        Command::Verify { metric, bbox, grid, tol } => commands::verify_cmd(&metric, &bbox, grid, tol),
        Command::Simulate { config, metrics, mode, noise, seed, out } => commands::simulate_cmd(&config, metrics, mode, noise, seed, out),
        Command::Report { traces, out } => commands::report_cmd(&traces, &out),
    };
    match result {
        Ok(status) => ExitCode::from(status.exit_code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
