mod commands;
mod config;
mod output;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use crate::commands::{dispatch, Context, COMMANDS};
use crate::config::{parse_config, LoadedConfig};
use crate::report::{config_hash, CliError, Outcome, RunReport};

const EXIT_HELP: &str = "\
Exit codes:
  0  every check passed
  2  configuration error (unreadable schema, unknown key, dimension mismatch)
  3  structure error (block sizes, superdiagonal rank, forbidden drift entries)
  4  a numeric check failed (details in report.json)
  5  runtime or I/O error

Every run writes OUT/report.json, including failed runs.";

#[derive(Debug, Parser)]
#[command(name = "ultrakfp", version, about = "Kernels, solvers and regularity checks for Kolmogorov-Fokker-Planck operators", after_help = EXIT_HELP)]
struct Cli {
    /// One of: validate, norm, kernel, covariance, verify-lemma21, potential,
    /// solve, mc-oracle, moser, growth, holder
    command: String,
    /// JSON run configuration
    #[arg(long)]
    config: PathBuf,
    /// Output directory (defaults to `out` in the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads
    #[arg(long, env = "ULTRAKFP_THREADS")]
    threads: Option<usize>,
    /// Write solver slices every k steps while running (solve only)
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    ExitCode::from(run(&cli) as u8)
}

fn run(cli: &Cli) -> i32 {
    let start = Instant::now();
    let mut outcome = Outcome::default();
    let loaded = parse_config(&cli.config);
    let out = cli
        .out
        .clone()
        .or_else(|| loaded.as_ref().ok().and_then(|l| l.config.out.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    let hash = match &loaded {
        Ok(l) => Some(config_hash(&l.bytes)),
        Err(_) => std::fs::read(&cli.config).ok().map(|b| config_hash(&b)),
    };
    let mut seed = None;
    let result = loaded.and_then(|l| {
        seed = Some(cli.seed.unwrap_or(l.config.seed));
        execute(cli, &l, seed.unwrap_or_default(), &out, &mut outcome)
    });
    let error = result.err();
    let report = RunReport {
        command: &cli.command,
        config_hash: hash,
        seed,
        wall_time_s: start.elapsed().as_secs_f64(),
        outcome: &outcome,
        error: error.as_ref(),
    };
    if let Some(e) = &error {
        eprintln!("{e}");
    }
    let code = report.exit_code();
    if let Err(e) = report.write(&out) {
        eprintln!("could not write report: {e}");
        return report::EXIT_RUNTIME;
    }
    for c in report.outcome.checks() {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    code
}

fn execute(cli: &Cli, loaded: &LoadedConfig, seed: u64, out: &std::path::Path, outcome: &mut Outcome) -> Result<(), CliError> {
    if !COMMANDS.contains(&cli.command.as_str()) {
        return Err(CliError::Config(format!(
            "unknown command {}; expected one of {}",
            cli.command,
            COMMANDS.join(", ")
        )));
    }
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    if cli.checkpoint_every == Some(0) {
        return Err(CliError::Config("--checkpoint-every must be positive".into()));
    }
    std::fs::create_dir_all(out)?;
    let ctx = Context {
        config: &loaded.config,
        model: &loaded.model,
        seed,
        out,
        checkpoint_every: cli.checkpoint_every,
    };
    dispatch(&cli.command, &ctx, outcome)
}
