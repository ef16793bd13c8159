//! Config-driven experiment runner on top of `qconv-core`.
//!
//! Every subcommand reads one TOML config, runs over its seed list
//! (optionally in parallel), writes CSV/JSON/SVG artifacts into an output
//! directory and finishes with a `manifest.json` listing seeds, files,
//! timings and pass/fail checks.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod output;
pub mod plot;

use std::path::{Path, PathBuf};
use std::time::Instant;

use qconv_core::learn::Algorithm;

pub use config::{ExperimentConfig, LoadedConfig};
pub use error::{CliError, CliResult};
pub use manifest::{Check, RunManifest, RunRecord};
pub use plot::emit_convergence_plot;

use commands::Ctx;
use output::{OutDir, CSV_SCHEMA_VERSION};

/// File name of the manifest inside the output directory.
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Solve,
    Qlearn,
    Sarsa,
    Decompose,
    Bounds,
    Lemmas,
    Ripple,
    Pgcheck,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Qlearn => "qlearn",
            Command::Sarsa => "sarsa",
            Command::Decompose => "decompose",
            Command::Bounds => "bounds",
            Command::Lemmas => "lemmas",
            Command::Ripple => "ripple",
            Command::Pgcheck => "pgcheck",
            Command::Report => "report",
        }
    }
}

/// Command-line values that take precedence over the config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub parallel: Option<usize>,
}

/// Runs `command` with the config at `config_path` and writes the manifest.
pub fn run_experiment(command: Command, config_path: &Path, overrides: &Overrides) -> CliResult<RunManifest> {
    let start = Instant::now();
    let cfg = LoadedConfig::load(config_path)?;
    let seeds = if overrides.seeds.is_empty() {
        cfg.config.seeds.clone()
    } else {
        overrides.seeds.clone()
    };
    if seeds.is_empty() {
        return Err(CliError::Config("seed list is empty".into()));
    }
    let out_path = overrides
        .out
        .clone()
        .or_else(|| cfg.config.out.as_ref().map(|p| cfg.resolve(p)))
        .unwrap_or_else(|| PathBuf::from("out"));
    let out = OutDir::create(&out_path)?;
    let parallel = overrides.parallel.or(cfg.config.parallel).unwrap_or(1);
    log::info!(
        "{} over {} seed(s) into {}",
        command.name(),
        seeds.len(),
        out_path.display()
    );
    let ctx = Ctx {
        cfg: &cfg,
        seeds: seeds.clone(),
        out: &out,
        parallel,
    };
    let outcome = match command {
        Command::Solve => commands::solve(&ctx),
        Command::Qlearn => commands::learn(&ctx, Algorithm::QLearning),
        Command::Sarsa => commands::learn(&ctx, Algorithm::Sarsa),
        Command::Decompose => commands::decompose(&ctx),
        Command::Bounds => commands::bounds(&ctx),
        Command::Lemmas => commands::lemmas(&ctx),
        Command::Ripple => commands::ripple(&ctx),
        Command::Pgcheck => commands::pgcheck(&ctx),
        Command::Report => commands::report(&ctx),
    }?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.name().to_string(),
        config_hash: manifest::config_hash(&cfg.bytes),
        csv_schema_version: CSV_SCHEMA_VERSION,
        seeds,
        runs: outcome.runs,
        checks: outcome.checks,
        files: out.files(),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    out.write_unlisted_json(MANIFEST_NAME, &manifest)?;
    Ok(manifest)
}
