//! `gwc`: command-line front end for alternating Galton-Watson systems.

mod commands;
mod report;

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gwc_core::Error;

use report::Format;

#[derive(Debug, Parser)]
#[command(
    name = "gwc",
    version,
    about = "Galton-Watson systems with alternating offspring mechanisms")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalOpts {
    /// Schedule as a JSON file path or inline JSON; defaults to
    /// a = b = {p_1 = 0.5, p_2 = 0.5}.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<String>,
    /// Report format (csv, or json for `verify`, when omitted).
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, allow_hyphen_values = true, default_value_t = gwc_core::iterate::DEFAULT_TOLERANCE)]
    pub tol: f64,
    #[arg(long = "max-iter", global = true, default_value_t = gwc_core::iterate::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Degree cap for truncated series.
    #[arg(long, global = true, default_value_t = gwc_core::series::DEFAULT_DEGREE_CAP)]
    pub degree: usize,
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true, default_value_t = 0.25)]
    pub epsilon: f64,
    #[arg(long, global = true, allow_hyphen_values = true, default_value_t = 0.5)]
    pub delta: f64,
    #[arg(long, global = true, allow_hyphen_values = true, default_value_t = gwc_core::limits::DEFAULT_S0)]
    pub s0: f64,
    /// Exponent of the weighted integral of `Q` (`ldp`).
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub r: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct PointOpts {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long = "n-max")]
    pub n_max: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extinction probabilities rho_a, rho_b, rho_ab, rho_ba.
    Extinction,
    /// Mean and variance of Z_n and W_n.
    Moments(PointOpts),
    /// Iterated generating functions f_n and their inverses g_n at s.
    Iterate(PointOpts),
    /// Law of Z_n as a truncated series.
    Dist(PointOpts),
    /// Limit functions Q and Q~ on the probe grid.
    Qfunc(PointOpts),
    /// Limit functions R and R~, R'(1) and theta_1.
    Rfunc(PointOpts),
    /// Chernoff rates and exact phi(k, eps) for both mechanisms.
    Chernoff(PointOpts),
    /// Exact ratio deviations, their normalized limit and the weighted Q integral.
    Ldp(PointOpts),
    /// Simulate trajectories.
    Simulate(SimulateOpts),
    /// Monte Carlo against exact results; pass/fail report.
    Verify,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateOpts {
    #[arg(long = "n-max")]
    pub n_max: Option<usize>,
    /// Per-generation summary instead of raw trajectories.
    #[arg(long)]
    pub summary: bool,
}

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("GWC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| format!("GWC_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("thread pool: {e}"))
}

fn exit_code(err: &Error) -> u8 {
    if err.is_numerical() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    let outcome = match commands::run(&cli.global, &cli.command) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let written = match &cli.global.out {
        Some(path) => std::fs::write(path, &outcome.text).map_err(|e| format!("{}: {e}", path.display())),
        None => std::io::stdout()
            .write_all(outcome.text.as_bytes())
            .map_err(|e| e.to_string()),
    };
    if let Err(msg) = written {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    ExitCode::from(outcome.status)
}
