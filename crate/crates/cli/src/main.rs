use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use qconv::{run_experiment, Command, Overrides};

/// Runs convergence experiments described by a TOML config.
#[derive(Debug, Parser)]
#[command(name = "qconv", version)]
struct Args {
    /// Experiment to run.
    #[arg(value_enum)]
    command: Command,
    /// Path to the TOML config.
    #[arg(long)]
    config: PathBuf,
    /// Seed to run; repeat to give several. Replaces the config's list.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replicas to run concurrently.
    #[arg(long)]
    parallel: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QCONV_LOG", "warn")).init();
    let args = Args::parse();
    let overrides = Overrides {
        seeds: args.seeds,
        out: args.out,
        parallel: args.parallel,
    };
    match run_experiment(args.command, &args.config, &overrides) {
        Ok(manifest) => {
            for c in &manifest.checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            for r in manifest.runs.iter().filter(|r| !r.ok) {
                println!("FAIL seed {}: {}", r.seed, r.error.as_deref().unwrap_or(""));
            }
            if manifest.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
