mod commands;
mod config;

use clap::Parser;
use commands::RunError;
use config::{Command, ConfigError, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

/// Scattering laboratory for two-dimensional Schrödinger operators.
#[derive(Parser, Debug)]
#[command(version)]
struct Cli {
    /// sweep, classify, tune, levinson, waveop or selftest
    command: String,
    /// Config file with `[section]` headers and `key = value` lines.
    #[arg(long)]
    config: PathBuf,
    /// Override one config entry, `section.key=value`; repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Omit the timestamp comment from the CSV.
    #[arg(long)]
    no_timestamp: bool,
}

fn configure_threads() -> Result<(), ConfigError> {
    let Ok(raw) = std::env::var("THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| ConfigError(format!("THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| ConfigError(format!("thread pool: {e}")))
}

fn execute(cli: &Cli) -> Result<(), RunError> {
    configure_threads()?;
    let cmd = Command::parse(&cli.command).ok_or_else(|| ConfigError(format!("unknown command `{}`", cli.command)))?;
    let cfg = RunConfig::load(&cli.config, &cli.set)?;
    let report = commands::run(cmd, &cfg)?;
    let stamp = if cli.no_timestamp {
        None
    } else {
        Some(SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
    };
    let csv = report.csv(stamp);
    match &cfg.output {
        Some(path) => {
            std::fs::write(path, csv).map_err(|e| RunError::Compute {
                module: "cli",
                message: format!("Io: {}: {e}", path.display()),
            })?;
            print!("{}", report.summary_text());
        }
        None => print!("{csv}"),
    }
    match report.failure {
        Some(err) => Err(err),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ RunError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
