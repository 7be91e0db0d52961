//! `randpress <subcommand> --config <file> [--seed N] [--out DIR] [--workers K]`

mod config;
mod ops;
mod output;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use config::{ExperimentConfig, Issue, Operation};

const DEFAULT_OUT: &str = "randpress-out";

#[derive(Parser)]
#[command(name = "randpress", version, about = "Thermodynamic formalism experiments for random expanding maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true, env = "RANDPRESS_WORKERS")]
    workers: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Expected pressure of a potential.
    Pressure,
    /// Bowen parameter, the zero of t ↦ E P(−t log|T'|).
    Bowen,
    /// Asymptotic variance and the essential / quasi-deterministic verdict.
    Classify,
    /// Temperature function and Legendre spectrum.
    Spectrum,
    /// Fiberwise decay of correlations.
    Decay,
    /// Expanding return set, return times and the induced pressure route.
    Induce,
    /// Dimension of random Julia sets from inverse trees.
    Julia,
    /// Branch tables, expansion floors and admissibility checks.
    Describe,
    /// The operation named in the configuration.
    Run,
}

impl Command {
    fn operation(self) -> Option<Operation> {
        match self {
            Command::Pressure => Some(Operation::Pressure),
            Command::Bowen => Some(Operation::Bowen),
            Command::Classify => Some(Operation::Classify),
            Command::Spectrum => Some(Operation::Spectrum),
            Command::Decay => Some(Operation::Decay),
            Command::Induce => Some(Operation::Induce),
            Command::Julia => Some(Operation::Julia),
            Command::Describe => Some(Operation::Describe),
            Command::Run => None,
        }
    }
}

enum Failure {
    Validation(Vec<Issue>),
    Module(randpress_core::Error),
    Io(String),
}

impl Failure {
    fn code(&self) -> &'static str {
        match self {
            Failure::Validation(_) => "validation",
            Failure::Module(e) => e.code(),
            Failure::Io(_) => "io",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Module(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        let (message, issues) = match self {
            Failure::Validation(issues) => (
                format!("{} invalid configuration key(s)", issues.len()),
                issues.iter().map(|i| json!({ "key": i.key, "message": i.message })).collect(),
            ),
            Failure::Module(e) => (e.to_string(), Vec::new()),
            Failure::Io(m) => (m.clone(), Vec::new()),
        };
        json!({ "error": { "code": self.code(), "message": message, "issues": issues } })
    }
}

fn invalid(key: &str, message: &str) -> Failure {
    Failure::Validation(vec![Issue { key: key.into(), message: message.into() }])
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let path = cli.config.as_ref().ok_or_else(|| invalid("--config", "a configuration file is required"))?;
    let bytes = std::fs::read(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| invalid("<document>", "configuration is not UTF-8"))?;
    let mut cfg = ExperimentConfig::from_toml(&text).map_err(Failure::Validation)?;
    let op = match cli.command.operation().or(cfg.operation) {
        Some(op) => op,
        None => return Err(invalid("operation", "required by the run subcommand")),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let workers = cli.workers.or(cfg.workers);
    if workers == Some(0) {
        return Err(invalid("workers", "must be at least 1"));
    }
    if let Some(k) = workers {
        // a pool already exists only when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));

    let mut bundle = ops::run(&cfg, op).map_err(Failure::Module)?;
    bundle.insert(
        "provenance",
        json!({
            "config_sha256": hex::encode(Sha256::digest(&bytes)),
            "seed": cfg.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "operation": op.as_str(),
        }),
    );
    bundle.write(&out).map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;
    let report = match bundle.text {
        Some(t) => t,
        None => serde_json::to_string_pretty(&bundle.summary).unwrap_or_default() + "\n",
    };
    // a closed pipe on stdout is not a failure: the bundle is already on disk
    let _ = std::io::stdout().write_all(report.as_bytes());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code())
        }
    }
}
