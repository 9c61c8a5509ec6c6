use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod output;
mod spec;

#[derive(Parser)]
#[command(name = "batchscreen", version, about = "Batch Bayesian screening of discrete candidate libraries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    GpFigure3,
    ScreeningFigure4,
    EpsTable1,
}

#[derive(Subcommand)]
enum Command {
    /// Run every campaign described by a spec file.
    Run {
        spec: PathBuf,
        /// Output directory (overrides `output_dir` in the spec).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a built-in experiment suite.
    Bench {
        #[arg(value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "bench-output")]
        out: PathBuf,
        /// TOML file overriding suite defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Aggregate the traces under a directory into summary tables.
    Report { dir: PathBuf },
    /// Serve Thompson proposals and evaluations over TCP.
    Worker {
        #[arg(long)]
        listen: String,
    },
}

/// Thread cap from `BATCHSCREEN_THREADS` (default 1).
pub fn thread_cap() -> usize {
    std::env::var("BATCHSCREEN_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n| n >= 1).unwrap_or(1)
}

/// Exit status for a command: validation problems map to 2, runtime failures to 1.
pub enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn worker(listen: &str) -> Result<()> {
    let listener = TcpListener::bind(listen).with_context(|| format!("cannot bind {listen}"))?;
    println!("listening on {}", listener.local_addr()?);
    use std::io::Write;
    std::io::stdout().flush()?;
    batchscreen::harness::serve_worker(listener)?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { spec, out } => commands::run(&spec, out.as_deref()),
        Command::Bench { suite, seed, out, config, repetitions, iterations } => {
            commands::bench(suite, seed, &out, config.as_deref(), repetitions, iterations)
        }
        Command::Report { dir } => commands::report(Path::new(&dir)),
        Command::Worker { listen } => worker(&listen).map_err(Failure::Runtime),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
