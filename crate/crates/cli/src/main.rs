//! `winseq`: group-sequential designs for hierarchical composite endpoints.

mod commands;
mod config;
mod data;
mod error;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Config, SimHypothesis};
use error::CliError;
use report::Report;

#[derive(Debug, Parser)]
#[command(name = "winseq", version, about = "Sequential win-ratio and net-benefit designs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Find the smallest sample size reaching the target power.
    Design {
        #[arg(long)]
        config: PathBuf,
        /// JSON report path; a markdown summary is written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Use τ / ξ estimates from this subject CSV instead of super-populations.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Stage-wise win statistics of a subject CSV.
    Analyze {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        /// Analyse stages 1..=K only.
        #[arg(long)]
        stage: Option<u32>,
        /// Also report boundaries and power with the data's own estimates.
        #[arg(long)]
        power: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Efficacy boundaries from alpha spending under H0.
    Boundaries {
        #[arg(long)]
        config: PathBuf,
        /// Total sample size over both arms.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Theoretical stage-wise power and ASN at a given sample size.
    Power {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo rejection rates of the sequential and fixed tests.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_enum)]
        hypothesis: Option<SimHypothesis>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one simulated trial as a subject CSV.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        replicate: u64,
        #[arg(long, value_enum)]
        hypothesis: Option<SimHypothesis>,
        /// Subject CSV to write.
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("WINSEQ_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("WINSEQ_THREADS must be a positive integer, got '{raw}'")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot size the worker pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    log::debug!("WINSEQ_THREADS={n} ignored: built without the parallel feature");
    Ok(())
}

fn emit(report: &Report, out: Option<&Path>) -> Result<(), CliError> {
    let Some(out) = out else {
        print!("{}", report.to_json());
        return Ok(());
    };
    let write = |p: &Path, text: String| {
        std::fs::write(p, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display())))
    };
    write(out, report.to_json())?;
    write(&out.with_extension("md"), report.to_markdown())?;
    log::info!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let load = |p: &Path| Config::load(p);
    let (report, out) = match cli.command {
        Command::Design {
            config,
            out,
            seed,
            data,
        } => {
            let cfg = load(&config)?;
            let seed = seed.unwrap_or(cfg.mc.seed);
            (
                commands::design(&cfg, seed, data.as_deref())?,
                out.or(cfg.io.out.clone()),
            )
        }
        Command::Analyze {
            data,
            config,
            stage,
            power,
            out,
        } => {
            let cfg = load(&config)?;
            (
                commands::analyze(&cfg, data.as_deref(), stage, power)?,
                out.or(cfg.io.out.clone()),
            )
        }
        Command::Boundaries {
            config,
            n,
            data,
            seed,
            out,
        } => {
            let cfg = load(&config)?;
            let seed = seed.unwrap_or(cfg.mc.seed);
            (
                commands::boundaries(&cfg, seed, n, data.as_deref())?,
                out.or(cfg.io.out.clone()),
            )
        }
        Command::Power {
            config,
            n,
            data,
            seed,
            out,
        } => {
            let cfg = load(&config)?;
            let seed = seed.unwrap_or(cfg.mc.seed);
            (
                commands::power(&cfg, seed, n, data.as_deref())?,
                out.or(cfg.io.out.clone()),
            )
        }
        Command::Simulate {
            config,
            reps,
            seed,
            n,
            hypothesis,
            out,
        } => {
            let cfg = load(&config)?;
            let seed = seed.unwrap_or(cfg.mc.seed);
            (
                commands::simulate(&cfg, seed, reps, n, hypothesis)?,
                out.or(cfg.io.out.clone()),
            )
        }
        Command::Generate {
            config,
            n,
            seed,
            replicate,
            hypothesis,
            csv,
            out,
        } => {
            let cfg = load(&config)?;
            let seed = seed.unwrap_or(cfg.mc.seed);
            let report = commands::generate(&cfg, seed, n, replicate, hypothesis, &csv)?;
            (report, out)
        }
    };
    emit(&report, out.as_deref())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("winseq: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
