use std::ffi::OsString;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::{Defaults, Flags};
use output::Artifacts;

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or inputs; exit status 2.
    Usage(String),
    /// An asserted property or internal contract failed; exit status 1.
    Failure(String),
}

impl From<quadland::Error> for CliError {
    fn from(e: quadland::Error) -> Self {
        match e {
            quadland::Error::Contract(_) | quadland::Error::NonFinite(_) => CliError::Failure(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "quadland", author, version, about = "Teacher-student experiments for quadratic networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Gradient descent from an identity-multiple or random student.
    GdRun(Flags),
    /// Random rank-deficient students against the energy barrier.
    BarrierScan(Flags),
    /// Identity init below the barrier across teacher seeds.
    InitCheck(Flags),
    /// Span condition of one dataset, with a null interpolator below N*.
    GeometryCheck(Flags),
    /// Span frequency as a function of N around N*.
    SampleComplexity(Flags),
    /// Gram discrepancy recovered from residuals.
    Recovery(Flags),
    /// Teacher Gram spectrum diagnostics across seeds.
    Spectrum(Flags),
}

type Runner = fn(&config::ExperimentConfig, &mut Artifacts) -> Result<serde_json::Value, CliError>;

fn dispatch(command: &Command) -> (&'static str, &Flags, Defaults, Runner) {
    match command {
        Command::GdRun(f) => (
            "gd-run",
            f,
            Defaults { m: |d| 4 * d * d, n: |d| 5 * (d * (d + 1) / 2), trials: 1 },
            commands::gd_run,
        ),
        Command::BarrierScan(f) => (
            "barrier-scan",
            f,
            Defaults { m: |d| 4 * d * d, n: |d| d * (d + 1) / 2, trials: 500 },
            commands::barrier_scan,
        ),
        Command::InitCheck(f) => (
            "init-check",
            f,
            Defaults { m: |d| 4 * d * d, n: |d| d * (d + 1) / 2, trials: 100 },
            commands::init_check,
        ),
        Command::GeometryCheck(f) => (
            "geometry-check",
            f,
            Defaults { m: |d| d + 1, n: |d| (d * (d + 1) / 2 - 1).max(1), trials: 1 },
            commands::geometry_check,
        ),
        Command::SampleComplexity(f) => (
            "sample-complexity",
            f,
            Defaults { m: |d| d, n: |d| d * (d + 1) / 2, trials: 100 },
            commands::sample_complexity,
        ),
        Command::Recovery(f) => (
            "recovery",
            f,
            Defaults { m: |d| d + 2, n: |d| 3 * (d * (d + 1) / 2), trials: 1 },
            commands::recovery,
        ),
        Command::Spectrum(f) => (
            "spectrum",
            f,
            Defaults { m: |d| 4 * d * d, n: |d| d * (d + 1) / 2, trials: 100 },
            commands::spectrum,
        ),
    }
}

fn execute(cli: &Cli) -> Result<serde_json::Value, CliError> {
    let (name, flags, defaults, runner) = dispatch(&cli.command);
    let config = config::resolve(name, flags, &defaults)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", config.jobs)))?;
    let mut out = Artifacts::create(&config.out)?;
    let result = pool.install(|| runner(&config, &mut out));
    // Failed runs still get a manifest.
    out.finish(&config)?;
    result
}

pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            0
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Failure(msg)) => {
            eprintln!("failed: {msg}");
            1
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}
