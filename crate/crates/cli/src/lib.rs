//! Command-line front end for the excursion-core solvers.

pub mod commands;
pub mod config;
pub mod table;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{cmd_demo, cmd_simulate, cmd_solve, CliError, RunOptions, SimulateArgs};

pub const THREADS_ENV: &str = "EXCURSION_STOP_THREADS";

#[derive(Debug, Parser)]
#[command(name = "excursion-stop", version, about = "Optimal stopping of diffusions with drawdown absorption")]
struct Cli {
    /// Directory for CSV output (overrides output.dir in the config).
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Suppress the summary printed to stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Value surface and diagonal thresholds on the configured grid.
    Solve { config: PathBuf },
    /// Monte Carlo run of the tabulated optimal policy from the mc.start points.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Worked examples with golden checks: put, lookback, shepp, invest.
    Demo { name: String },
}

fn threads_from_env() -> Result<Option<usize>, String> {
    match std::env::var(THREADS_ENV) {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(format!("{THREADS_ENV}: {e}")),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("{THREADS_ENV} must be a positive integer, got `{v}`")),
        },
    }
}

/// Run the CLI and return the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = if code == 0 { write!(out, "{e}") } else { write!(err, "{e}") };
            return code;
        }
    };
    let threads = match threads_from_env() {
        Ok(t) => t,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            return 2;
        }
    };
    if let Some(n) = threads {
        // Fails only if the global pool already exists, e.g. under a test harness.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let opts = RunOptions { out_dir: cli.out_dir, quiet: cli.quiet, threads };
    let result: Result<(), CliError> = match &cli.cmd {
        Cmd::Solve { config } => cmd_solve(config, &opts, out),
        Cmd::Simulate { config, paths, seed } => {
            cmd_simulate(config, &SimulateArgs { paths: *paths, seed: *seed }, &opts, out)
        }
        Cmd::Demo { name } => cmd_demo(name, &opts, out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
