//! Command-line front end for the benchmark pipeline.
//!
//! Each subcommand runs one stage against a run directory derived from the
//! config (or named with `--run-id`); `run-all` executes every stage in
//! order. Success exits 0; a failed stage exits 1; configuration problems
//! exit 2. Errors are emitted to stderr as a single JSON object so wrappers
//! can parse them.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sqbench_core::config::RunConfig;
use sqbench_core::gateway::Mode;
use sqbench_core::manifest::StageStatus;
use sqbench_core::pipeline::{Pipeline, PipelineError, PipelineOptions};

#[derive(Parser)]
#[command(name = "sqbench", version, about = "Benchmark pipeline for search systems over structured data")]
struct Cli {
    /// Path to the run configuration file.
    #[arg(long, global = true, default_value = "config.json")]
    config: PathBuf,

    /// Run directory name; defaults to a digest of the config and mode.
    #[arg(long, global = true)]
    run_id: Option<String>,

    /// Replay recorded model traffic from cassettes (default).
    #[arg(long, global = true, conflicts_with_all = ["record", "live"])]
    replay: bool,

    /// Call providers and record their responses into cassettes.
    #[arg(long, global = true, conflicts_with = "live")]
    record: bool,

    /// Call providers without recording.
    #[arg(long, global = true)]
    live: bool,

    /// Skip stages the manifest already marks complete.
    #[arg(long, global = true)]
    resume: bool,

    /// Success threshold override: a score counts as a success when it is
    /// at least tau (after inverting bias).
    #[arg(long, global = true)]
    tau: Option<f64>,

    /// Significance level override for the chi-square report.
    #[arg(long, global = true)]
    alpha: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate candidate questions for every persona x difficulty context.
    Generate,
    /// Filter candidates through the deterministic quality gate.
    Gate,
    /// Map accepted questions to open-domain equivalents.
    Map,
    /// Collect answers from every configured system.
    Collect,
    /// Score collected answers with the rubric judge.
    Judge,
    /// Write the summary, chi-square, and histogram CSV reports.
    Stats,
    /// Write the SQL-to-question token-ratio curve.
    TokenRatio,
    /// Render the markdown report from the emitted artifacts.
    Report,
    /// Run every stage in order.
    RunAll,
}

impl Command {
    fn stage(&self) -> Option<&'static str> {
        match self {
            Command::Generate => Some("generate"),
            Command::Gate => Some("gate"),
            Command::Map => Some("map"),
            Command::Collect => Some("collect"),
            Command::Judge => Some("judge"),
            Command::Stats => Some("stats"),
            Command::TokenRatio => Some("token_ratio"),
            Command::Report => Some("report"),
            Command::RunAll => None,
        }
    }
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let mode = if cli.live {
        Mode::Live
    } else if cli.record {
        Mode::Record
    } else {
        Mode::Replay
    };
    let config = RunConfig::load(&cli.config)?;
    let options = PipelineOptions {
        run_id: cli.run_id.clone(),
        mode,
        tau: cli.tau,
        alpha: cli.alpha,
    };
    let mut pipeline = Pipeline::open(config, &options)?;

    match cli.command.stage() {
        Some(stage) => {
            if cli.resume && pipeline.manifest().status(stage)? == StageStatus::Complete {
                println!("{stage}: already complete in {}", pipeline.run_dir().display());
                return Ok(());
            }
            pipeline.run_stage(stage)?;
            println!("{stage}: complete in {}", pipeline.run_dir().display());
        }
        None => {
            pipeline.run_all(cli.resume)?;
            println!("run-all: complete in {}", pipeline.run_dir().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_json());
            if err.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
