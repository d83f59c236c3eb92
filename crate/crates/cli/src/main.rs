mod config;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{Format, Mode, Overrides};
use zeno::tomography::Axis;

// clap itself exits with 2 on usage errors; config problems share that code.
const EXIT_INPUT: u8 = 2;
const EXIT_COMPUTE: u8 = 3;
const EXIT_CHECK: u8 = 4;

/// Blocked-cavity simulations: photon-number traces, Wigner snapshots,
/// joint-model validation, parameter fits and N scans.
#[derive(Parser, Debug)]
#[command(name = "zeno", version)]
struct Args {
    #[arg(value_enum)]
    mode: Mode,
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Comma-separated times in µs.
    #[arg(long)]
    times: Option<String>,
    /// Square Wigner grid as min:max:step.
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Seeds the measurement noise added to synthetic fit data.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn execute(args: Args) -> Result<(), (u8, String)> {
    let input = |e: &dyn std::fmt::Display| (EXIT_INPUT, e.to_string());
    let flags = Overrides {
        out: args.out,
        format: args.format,
        times: args.times.as_deref().map(config::parse_times).transpose().map_err(|e| input(&e))?,
        grid: args.grid.as_deref().map(Axis::parse).transpose().map_err(|e| input(&e))?,
        seed: args.seed,
    };
    let file = config::load(args.config.as_deref()).map_err(|e| input(&e))?;
    let resolved = config::resolve(args.mode, file, flags).map_err(|e| input(&e))?;
    let outcome = run::run(&resolved).map_err(|e| match e {
        run::RunError::Input(_) => (EXIT_INPUT, e.to_string()),
        _ => (EXIT_COMPUTE, e.to_string()),
    })?;
    for f in &outcome.files {
        println!("{}", f.display());
    }
    match outcome.failure {
        Some(msg) => Err((EXIT_CHECK, format!("check failed: {msg}"))),
        None => Ok(()),
    }
}
