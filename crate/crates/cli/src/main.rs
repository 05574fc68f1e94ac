//! `mquench`: batch driver for measurement-quench simulations.
//!
//! Exit codes: 0 success, 1 i/o failure, 2 config error, 3 numerical
//! failure, 4 partial results. Failures leave `error.json` in the output
//! directory and print the same report on stderr.

// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Status;
use config::{Overrides, RunConfig, JOBS_ENV};
use error::{CliError, CliResult};
use output::Output;

#[derive(Clone, Copy, Subcommand)]
enum Command {
    /// Ground state, collapse and evolution of m^x(t).
    Quench,
    /// Quench plus Fourier spectrum, peaks and gap matching.
    Spectroscopy,
    /// Finite-size collapse of a family of quenches.
    Collapse,
    /// Kondo screening-cloud profiles and ξ_K fits.
    Cloud,
    /// Quick internal consistency checks.
    Selftest,
}

#[derive(Clone, clap::Args)]
struct Flags {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (overrides `jobs` and MQUENCH_JOBS).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for the eigensolver start vector (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Parser)]
#[command(name = "mquench", version, about = "Measurement-quench dynamics of spin chains")]
struct Args {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Quench => "quench",
            Command::Spectroscopy => "spectroscopy",
            Command::Collapse => "collapse",
            Command::Cloud => "cloud",
            Command::Selftest => "selftest",
        }
    }

    fn run(self, config: &RunConfig, out: &mut Output) -> CliResult<Status> {
        match self {
            Command::Quench => commands::cmd_quench(config, out),
            Command::Spectroscopy => commands::cmd_spectroscopy(config, out),
            Command::Collapse => commands::cmd_collapse(config, out),
            Command::Cloud => commands::cmd_cloud(config, out),
            Command::Selftest => commands::cmd_selftest(config, out),
        }
    }

    /// Everything that can be checked without computing.
    fn validate(self, config: &RunConfig) -> CliResult<()> {
        match self {
            Command::Quench => config.validate_quench(),
            Command::Spectroscopy => config.spectroscopy().map(drop),
            Command::Collapse => config.collapse().map(drop),
            Command::Cloud => config.cloud().map(drop),
            Command::Selftest => config.propagator().map(drop),
        }
    }
}

fn load(flags: &Flags, command: Command) -> CliResult<RunConfig> {
    let mut config = match &flags.config {
        Some(path) => RunConfig::load(path)?,
        None if matches!(command, Command::Selftest) => RunConfig::default(),
        None => return Err(CliError::Config("--config is required".into())),
    };
    let overrides = Overrides {
        out: flags.out.clone(),
        jobs: flags.jobs,
        seed: flags.seed,
    };
    config.apply(&overrides, std::env::var(JOBS_ENV).ok().as_deref())?;
    command.validate(&config)?;
    Ok(config)
}

fn execute(command: Command, config: &RunConfig) -> CliResult<()> {
    let jobs = config.jobs.unwrap_or_else(rayon::current_num_threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let mut out = Output::create(&config.out_dir())?;
    let result = pool.install(|| command.run(config, &mut out));
    let status = match &result {
        Ok(Status::Complete) => "ok",
        Ok(Status::Partial(_)) => "partial",
        Err(_) => "failed",
    };
    out.finish(command.name(), &config.digest(), status, jobs)?;
    match result? {
        Status::Complete => Ok(()),
        Status::Partial(why) => Err(CliError::Partial(why)),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command = args.command;
    let (result, dir) = match load(&args.flags, command) {
        Ok(config) => (execute(command, &config), Some(config.out_dir())),
        Err(e) => (Err(e), args.flags.out.clone()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = e.report(command.name());
            if let Some(dir) = dir {
                output::write_error(&dir, &report);
            }
            eprintln!("{}", serde_json::to_string(&report).expect("report serializes"));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
