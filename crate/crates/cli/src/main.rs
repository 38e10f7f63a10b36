use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use kgorbit_cli::config::Formats;
use kgorbit_cli::{override_seed, parse_config, run, CliError};

/// Run Klein–Gordon orbit experiments from a config file.
#[derive(Debug, Parser)]
#[command(name = "kgorbit", version)]
struct Args {
    /// Path to the run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `[output] dir`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, env = "KGORBIT_WORKERS")]
    workers: Option<usize>,
    /// Replaces the configured seeds with this one.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of csv,json.
    #[arg(long)]
    format: Option<String>,
}

fn execute(args: &Args) -> Result<i32, CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| CliError::Io {
        path: args.config.clone(),
        message: e.to_string(),
    })?;
    let mut cfg = parse_config(&text)?;
    if let Some(dir) = &args.output {
        cfg.output.dir = dir.clone();
    }
    if let Some(seed) = args.seed {
        override_seed(&mut cfg, seed);
    }
    if let Some(f) = &args.format {
        cfg.output.formats = Formats::parse(f).map_err(|reason| CliError::Validation {
            key: "format".into(),
            reason,
        })?;
    }
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let outcome = run(&cfg, workers)?;
    for a in &outcome.anomalies {
        eprintln!("ANOMALY: {a}");
    }
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(1)
        }
    }
}
