//! Batch harness for the roughpam experiments: TOML configuration,
//! subcommands, fingerprinted artifacts and an append-only result store.

pub mod commands;
pub mod config;
pub mod selftest;
pub mod store;

use std::path::PathBuf;

use roughpam::PamError;

use crate::commands::Outcome;
use crate::config::{default_config_text, load, parse, validate, Validated};
use crate::store::{ResultRecord, ResultStore};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Flagged(String),
    Integrity(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Flagged(_) => 3,
            CliError::Integrity(_) => 4,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Flagged(m) => write!(f, "flagged estimate: {m}"),
            CliError::Integrity(m) => write!(f, "integrity error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<PamError> for CliError {
    fn from(e: PamError) -> Self {
        match e {
            PamError::InvalidParameter { .. } => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    Solve,
    Moments,
    Intermittency,
    Chaos,
    Selftest,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Solve => "solve",
            Command::Moments => "moments",
            Command::Intermittency => "intermittency",
            Command::Chaos => "chaos",
            Command::Selftest => "selftest",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

/// Loads, overrides and validates the configuration. Without `--config`
/// the built-in reference configuration is used.
pub fn prepare(o: &Overrides) -> Result<Validated, CliError> {
    let mut cfg = match &o.config {
        Some(p) => load(p)?,
        None => parse(default_config_text())?,
    };
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(d) = &o.out {
        cfg.output_dir = d.clone();
    }
    if let Some(t) = o.threads {
        cfg.threads = t;
    }
    validate(cfg)
}

/// Runs one command end to end: validation, execution, artifact files and
/// the result record. Flagged outcomes are persisted before the error.
pub fn run(command: Command, v: &Validated) -> Result<String, CliError> {
    let dir = v.config.output_dir.clone();
    let outcome: Outcome = match command {
        Command::Validate => commands::cmd_validate(v)?,
        other => {
            commands::require_admissible(v)?;
            match other {
                Command::Solve => commands::cmd_solve(v)?,
                Command::Moments => commands::cmd_moments(v)?,
                Command::Intermittency => commands::cmd_intermittency(v)?,
                Command::Chaos => commands::cmd_chaos(v)?,
                Command::Selftest => selftest::cmd_selftest(&v.fingerprint, &dir)?,
                Command::Validate => unreachable!(),
            }
        }
    };
    let store = ResultStore::open(&dir)?;
    let record = ResultRecord::new(&v.fingerprint, command.name(), &outcome.artifacts);
    store.append(&record)?;
    outcome.artifacts.write_to(&dir)?;
    match outcome.flagged {
        Some(reason) => Err(CliError::Flagged(format!("{reason}\n{}", outcome.summary))),
        None => Ok(outcome.summary),
    }
}
