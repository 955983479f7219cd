//! `intermittence`: score, classify, simulate and report on nightly test
//! verdict histories.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! input data errors.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use intermittence::Format;

use commands::ReportKind;
use config::RunConfig;
use error::{CliError, Result};

#[derive(Parser)]
#[command(name = "intermittence", version, about = "Find intermittently failing tests in nightly verdict histories")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "INTERMITTENCE_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// Input format; guessed from the file extension when absent.
    #[arg(long, global = true)]
    format: Option<Format>,
    /// Simulation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Window size; repeat for several (default 6 and 13).
    #[arg(long = "window", global = true)]
    windows: Vec<usize>,
    /// TOML file of `[[group]]` specs replacing the default groups.
    #[arg(long, global = true)]
    spec_file: Option<PathBuf>,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize verdict files into one sorted, deduplicated dataset.
    Ingest {
        inputs: Vec<PathBuf>,
        /// Output format.
        #[arg(long, default_value = "jsonl")]
        to: Format,
    },
    /// Windowed and whole-history q- and p-scores per test.
    Score { inputs: Vec<PathBuf> },
    /// Group assignments, population summary and group overlaps.
    Classify { inputs: Vec<PathBuf> },
    /// Generate a synthetic dataset with ground-truth groups.
    Simulate {
        /// Scenario suite (TOML); the bundled suite when absent.
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Output format.
        #[arg(long, default_value = "jsonl")]
        to: Format,
    },
    /// Timelines, heatmap, summary tables, root-cause ledger, run lengths.
    Report {
        inputs: Vec<PathBuf>,
        /// Reports to produce; by default all that the given inputs allow.
        #[arg(long, value_enum, value_delimiter = ',')]
        only: Vec<ReportKind>,
        /// Timelines for every test instead of only group members.
        #[arg(long)]
        all_timelines: bool,
        /// Root-cause annotations (JSONL).
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Category tree (TOML); the built-in tree when absent.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Revision log (JSONL or CSV) for run-length statistics.
        #[arg(long)]
        revisions: Option<PathBuf>,
        /// First night shown in the heatmap.
        #[arg(long)]
        from: Option<NaiveDate>,
        /// Last night shown in the heatmap.
        #[arg(long)]
        to: Option<NaiveDate>,
    },
}

fn merged_config(global: &Global, inputs: &[PathBuf]) -> Result<RunConfig> {
    let mut config = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if !inputs.is_empty() {
        config.inputs = inputs.to_vec();
    }
    if global.out_dir.is_some() {
        config.out_dir = global.out_dir.clone();
    }
    if global.format.is_some() {
        config.format = global.format;
    }
    if global.seed.is_some() {
        config.seed = global.seed;
    }
    if !global.windows.is_empty() {
        config.windows = Some(global.windows.clone());
    }
    if global.spec_file.is_some() {
        config.spec_file = global.spec_file.clone();
    }
    if global.jobs.is_some() {
        config.jobs = global.jobs;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let empty = Vec::new();
    let inputs = match &cli.command {
        Command::Ingest { inputs, .. } | Command::Score { inputs } | Command::Classify { inputs } => inputs,
        Command::Report { inputs, .. } => inputs,
        Command::Simulate { .. } => &empty,
    };
    let mut config = merged_config(&cli.global, inputs)?;
    config.windows()?;
    if let Some(jobs) = config.jobs {
        if jobs == 0 {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::usage(format!("cannot start worker pool: {e}")))?;
    }

    let outputs = match cli.command {
        Command::Ingest { to, .. } => commands::ingest_cmd(&config, to)?,
        Command::Score { .. } => commands::score_cmd(&config)?,
        Command::Classify { .. } => commands::classify_cmd(&config)?,
        Command::Simulate { suite, to } => {
            if suite.is_some() {
                config.suite = suite;
            }
            commands::simulate_cmd(&config, to)?
        }
        Command::Report { only, all_timelines, annotations, taxonomy, revisions, from, to, .. } => {
            config.annotations = annotations.or(config.annotations);
            config.taxonomy = taxonomy.or(config.taxonomy);
            config.revisions = revisions.or(config.revisions);
            config.from = from.or(config.from);
            config.to = to.or(config.to);
            commands::report_cmd(&config, &only, all_timelines)?
        }
    };
    let dir = config.out_dir();
    let count = outputs.write(&dir)?;
    eprintln!("wrote {count} files to {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
