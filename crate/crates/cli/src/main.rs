use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

mod config;
mod experiments;
mod output;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown experiment '{0}'")]
    UnknownExperiment(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Numerical(#[from] langevin_splitting::Error),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::UnknownExperiment(_) => "unknown-experiment",
            CliError::Io(_) => "io",
            CliError::Numerical(_) => "numerical",
        }
    }

    fn record(&self) -> serde_json::Value {
        let (step, path) = match self {
            CliError::Numerical(e) => (e.step_index(), e.path_index()),
            _ => (None, None),
        };
        serde_json::json!({ "error": self.kind(), "message": self.to_string(), "step": step, "path": path })
    }
}

/// Runs the numerical experiments of the splitting integrators and writes
/// CSV tables plus a JSON summary.
#[derive(Debug, Parser)]
#[command(name = "langevin-split", version)]
struct Args {
    /// simulate, strong-order, weak-order, long-time-error, ergodic-average,
    /// histogram, msd, exp-moment, lyapunov, jacobian, phase-area or dissipation-demo.
    #[arg(long)]
    experiment: Option<String>,
    /// Flat TOML file overriding the experiment defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve(args: &Args) -> Result<RunConfig, CliError> {
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let experiment = match (&args.experiment, RunConfig::experiment_in(&text)?) {
        (Some(e), _) => e.clone(),
        (None, Some(e)) => e,
        (None, None) => {
            return Err(CliError::Config("no experiment given (use --experiment or the config key)".into()))
        }
    };
    let mut cfg = RunConfig::from_toml(&experiment, &text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn run(args: &Args) -> Result<output::Summary, CliError> {
    let cfg = resolve(args)?;
    let mut summary = experiments::run(&cfg, &cfg.out)?;
    summary.files.push("summary.json".into());
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))?;
    let path = cfg.out.join("summary.json");
    std::fs::write(&path, format!("{json}\n")).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(summary)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(2)
        }
    }
}
