//! Command-line front end: argument parsing, configuration loading and the
//! six pipeline commands.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(
    name = "penlink",
    version,
    about = "One-to-one probabilistic record linkage"
)]
pub struct Cli {
    /// JSON pipeline configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the configured one.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Top-level seed; overrides the configured one.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Compare two record files into a pattern table and pair index.
    Compare,
    /// Estimate parameters and links from the comparison artifacts.
    Fit {
        #[arg(long, value_enum, default_value_t = Method::Penlik)]
        method: Method,
    },
    /// Threshold fitted weights into post-hoc blocks.
    Block,
    /// Sample links within blocks by restricted MCMC.
    Mcmc,
    /// Run the estimator comparison experiment.
    Eval,
    /// Generate a synthetic pair of record files with ground truth.
    Synth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Method {
    Fs,
    EmLsap,
    Penlik,
    ThetaSweep,
}

/// A failed run, split by exit code: invalid input exits with 1, failures
/// after validation with 2.
#[derive(Debug)]
pub enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Invalid(e) | Failure::Runtime(e) => e,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<penlink_core::Error> for Failure {
    fn from(e: penlink_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Invalid(anyhow::anyhow!(msg.into()))
}

/// Reads the configuration file (if any) and applies flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| invalid(format!("config {}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.output = Some(out.clone());
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(w) = cli.workers {
        config.workers = Some(w);
    }
    config.validate().map_err(|e| Failure::Invalid(e.into()))?;
    Ok(config)
}

/// Validates, then runs the command on a pool of the configured size.
pub fn execute(cli: &Cli) -> Result<(), Failure> {
    let config = resolve_config(cli)?;
    commands::check_requirements(&cli.command, &config)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = config.workers {
        pool = pool.num_threads(w);
    }
    let pool = pool.build().map_err(|e| Failure::Runtime(e.into()))?;
    pool.install(|| commands::run(&cli.command, &config))
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            f.exit_code()
        }
    }
}
