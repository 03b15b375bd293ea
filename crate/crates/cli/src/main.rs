use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use taskspace_cli::commands::{self, ProbeOptions, Run, Selector};
use taskspace_cli::config::RunConfig;
use taskspace_cli::CliError;

#[derive(Parser)]
#[command(name = "taskspace", version, about = "Linguistic task spaces for small language models")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Verb {
    /// Generate the synthetic minimal-pair suite.
    Generate,
    /// Ingest BLiMP-format records as the suite.
    Ingest,
    /// Pretrain the language model, resuming from saved checkpoints.
    Pretrain,
    /// Probe checkpoints: gradient differentials and transfer.
    Probe {
        /// `final`, `all` or an epoch number.
        #[arg(long, default_value = "final")]
        checkpoint: Selector,
        /// Skip tuning and emit gradient dumps only.
        #[arg(long)]
        gradient_only: bool,
        /// Parallel tuning jobs.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Build spaces, correlations, series and heatmaps.
    Analyze,
    /// Write a markdown summary.
    Report,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref(), cli.seed, cli.out)?;
    let mut run = Run::new(cfg)?;
    match cli.verb {
        Verb::Generate => commands::generate(&mut run),
        Verb::Ingest => commands::ingest(&mut run),
        Verb::Pretrain => commands::pretrain(&mut run),
        Verb::Probe {
            checkpoint,
            gradient_only,
            jobs,
        } => {
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            commands::probe(
                &mut run,
                &ProbeOptions {
                    selector: checkpoint,
                    gradient_only,
                    jobs,
                },
            )
        }
        Verb::Analyze => commands::analyze(&mut run),
        Verb::Report => commands::report(&mut run),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TASKSPACE_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
