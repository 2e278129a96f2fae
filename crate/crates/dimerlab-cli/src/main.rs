//! `dimerlab --config experiment.toml --out DIR`: run one experiment and
//! write its JSON, CSV and SVG artifacts.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 invalid
//! configuration, 3 runtime or I/O error.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Lib(#[from] dimerlab::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::ConfigInvalid(_) => 2,
            CliError::Lib(dimerlab::Error::InvalidArgument(_)) => 2,
            _ => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::ConfigInvalid(_) | CliError::Lib(dimerlab::Error::InvalidArgument(_)) => "ConfigInvalid",
            CliError::Io(_) => "Io",
            CliError::Lib(_) => "Runtime",
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "dimerlab", version, about = "Run a dimerlab experiment described by a TOML file")]
struct Args {
    /// Experiment TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts; overrides the `out` key, default `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the `seed` key of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, env = "DIMERLAB_THREADS", default_value_t = 0)]
    threads: usize,
}

fn run(args: &Args) -> Result<bool, CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| CliError::Io(format!("{}: {e}", args.config.display())))?;
    let mut cfg = config::parse(&text)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(args.threads).build_global().map_err(|e| CliError::Io(e.to_string()))?;
    }
    let out = args.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let outcome = commands::run(&cfg, &out)?;
    if !outcome.passed {
        println!("{}", serde_json::to_string(&outcome.document["result"]).unwrap_or_default());
    }
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::from(e.exit_code())
        }
    }
}
