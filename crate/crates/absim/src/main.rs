//! Command-line entry point: one experiment config document, five
//! subcommands covering the pipeline stages.

use absim::cli::{cmd_allocate, cmd_analyze, cmd_personas, cmd_pipeline, cmd_run, Overrides};
use absim::config::ExperimentConfig;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "absim",
    version,
    about = "Agent-based A/B testing harness: generate personas, allocate arms, run sessions, analyze results"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config document (JSON).
    #[arg(long, global = true, default_value = "experiment.json")]
    config: PathBuf,

    /// Override seeds.personas.
    #[arg(long, global = true)]
    seed_personas: Option<u64>,

    /// Override seeds.sample.
    #[arg(long, global = true)]
    seed_sample: Option<u64>,

    /// Override seeds.allocation.
    #[arg(long, global = true)]
    seed_allocation: Option<u64>,

    /// Override seeds.run.
    #[arg(long, global = true)]
    seed_run: Option<u64>,

    /// Override the worker-pool size.
    #[arg(long, global = true)]
    parallelism: Option<usize>,

    /// Override the output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Suppress progress records on standard error.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the persona pool (writes personas.json).
    Personas,
    /// Sample personas and rerandomize into balanced arms (writes allocation.json).
    Allocate,
    /// Run all sessions (writes traces/ and manifest.json).
    Run,
    /// Aggregate traces and render the comparison report (writes report.txt/json).
    Analyze,
    /// Run all stages in order.
    Pipeline,
}

fn main() {
    let cli = Cli::parse();
    let overrides = Overrides {
        seed_personas: cli.seed_personas,
        seed_sample: cli.seed_sample,
        seed_allocation: cli.seed_allocation,
        seed_run: cli.seed_run,
        parallelism: cli.parallelism,
        output_dir: cli.output_dir.clone(),
        quiet: cli.quiet,
    };

    let mut config = match ExperimentConfig::load(&cli.config) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("error: {}", e);
            std::process::exit(1);
        }
    };
    overrides.apply(&mut config);
    if let Err(e) = config.validate() {
        eprintln!("error: {}", e);
        std::process::exit(1);
    }

    let result = match cli.command {
        Command::Personas => cmd_personas(&config),
        Command::Allocate => cmd_allocate(&config),
        Command::Run => cmd_run(&config, cli.quiet).map(|_| ()),
        Command::Analyze => cmd_analyze(&config),
        Command::Pipeline => cmd_pipeline(&config, cli.quiet),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e);
            std::process::exit(e.exit_code());
        }
    }
}
