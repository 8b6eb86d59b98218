//! `embedq`: seeded experiments on a small system embedded in a large
//! random environment.
//!
//! Exit codes: 0 success, 2 configuration error, 3 nothing usable (every
//! realization failed or a runtime error), 4 partial failure (some
//! realizations failed, aggregates still written).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use embedq::error::Error;
use embedq::harness::cache::cache_dir_from_env;
use embedq::harness::commands::{
    cmd_crossover, cmd_dynamics, cmd_ldos, cmd_transitions, cmd_typicality, CommandContext,
    CommandOutcome,
};
use embedq::harness::config::ExperimentConfig;
use embedq::Result;

#[derive(Parser)]
#[command(
    name = "embedq",
    version,
    about = "Exact-diagonalization experiments: a small quantum system \
             thermalizing through a random interaction with a large environment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the reduced system state and record the plateau statistics.
    Dynamics(RunArgs),
    /// Sweep the interaction strength: plateau vs kernel predictions.
    Crossover(RunArgs),
    /// Pool the local density of states around selected bare states.
    Ldos(RunArgs),
    /// Across-seed plateau spread as the environment dimension grows.
    Typicality(RunArgs),
    /// Ensemble-averaged transition rows vs the kernel prediction.
    Transitions(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (single JSON document).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; falls back to the config's `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run at the published environment dimension (4096) instead of the
    /// desk-scale default.
    #[arg(long)]
    paper_scale: bool,
    /// Worker threads for the seed pool (results do not depend on it).
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (run, args): (fn(&CommandContext) -> Result<CommandOutcome>, &RunArgs) =
        match &cli.command {
            Command::Dynamics(a) => (cmd_dynamics, a),
            Command::Crossover(a) => (cmd_crossover, a),
            Command::Ldos(a) => (cmd_ldos, a),
            Command::Typicality(a) => (cmd_typicality, a),
            Command::Transitions(a) => (cmd_transitions, a),
        };
    match execute(args, run) {
        Ok(outcome) => {
            let ok = outcome.total_cells - outcome.failed_cells;
            log::info!("{ok}/{} realizations succeeded", outcome.total_cells);
            ExitCode::from(outcome.exit_code())
        }
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

fn execute(
    args: &RunArgs,
    run: fn(&CommandContext) -> Result<CommandOutcome>,
) -> Result<CommandOutcome> {
    let config = ExperimentConfig::from_path(&args.config)?;
    let out_dir = match (&args.out, &config.output.directory) {
        (Some(out), _) => out.clone(),
        (None, Some(dir)) => PathBuf::from(dir),
        (None, None) => {
            return Err(Error::config(
                "output.directory",
                "no output directory: pass --out or set output.directory",
            ))
        }
    };
    if args.threads == 0 {
        return Err(Error::config("--threads", "must be at least 1"));
    }
    // One level of parallelism only: the seed pool owns the threads, each
    // diagonalization stays sequential.
    faer::set_global_parallelism(faer::Par::Seq);
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(args.threads).build_global() {
        log::warn!("worker pool already initialized: {e}");
    }
    let ctx = CommandContext {
        config,
        out_dir,
        threads: args.threads,
        cache_dir: cache_dir_from_env(),
        paper_scale: args.paper_scale,
    };
    run(&ctx)
}
