//! `gridsas`: scenario generation, training, evaluation, K ablation, replay
//! and catalogue inspection.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "gridsas", version, about = "Top-K action set planning for grid topology control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by commands that build a run configuration.
#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid preset (case5, case14) or grid file.
    #[arg(long)]
    grid: Option<String>,
    /// Training scenario directory.
    #[arg(long)]
    scenarios: Option<PathBuf>,
    /// Held-out scenario directory for the closing evaluation.
    #[arg(long)]
    eval_scenarios: Option<PathBuf>,
    #[arg(long, env = "GRIDSAS_OUTPUT_DIR")]
    output: Option<PathBuf>,
    #[arg(long, env = "GRIDSAS_WORKERS")]
    workers: Option<usize>,
    /// local, threads or processes.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Action set size; a comma list trains one run per value.
    #[arg(long)]
    k: Option<String>,
    /// Any other config key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write seeded chronics and attack files.
    GenScenarios {
        #[arg(long, default_value = "case5")]
        grid: String,
        #[arg(long, default_value_t = 20)]
        count: usize,
        /// Steps per scenario (288 is one day).
        #[arg(long, default_value_t = gridsas::env::STEPS_PER_DAY)]
        length: usize,
        /// Expected line attacks per simulated day.
        #[arg(long)]
        attack_rate: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Lower and upper demand level, e.g. 1.0,1.1.
        #[arg(long)]
        level: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the proposal policy with evolution strategies.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from the newest checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Play a checkpoint (or do-nothing) greedily over a scenario set.
    Evaluate {
        #[arg(long, required_unless_present = "do_nothing")]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "case5")]
        grid: String,
        #[arg(long)]
        scenarios: PathBuf,
        /// Action set sizes, comma separated; one report row each.
        #[arg(long, default_value = "100")]
        k: String,
        #[arg(long)]
        do_nothing: bool,
        #[arg(long, default_value_t = 0)]
        max_steps: usize,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long)]
        include_redispatch: bool,
        /// Directory for the report and replay log.
        #[arg(long, env = "GRIDSAS_OUTPUT_DIR")]
        output: Option<PathBuf>,
    },
    /// Train one policy per K, then evaluate every policy at every K.
    AblateK {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        resume: bool,
    },
    /// Print a replay log.
    Replay {
        #[arg(long)]
        log: PathBuf,
        /// Only this scenario.
        #[arg(long)]
        scenario: Option<String>,
        /// One line per scenario instead of one per step.
        #[arg(long)]
        summary: bool,
    },
    /// Print the action catalogue as a table.
    DumpCatalogue {
        #[arg(long, default_value = "case5")]
        grid: String,
        #[arg(long)]
        include_redispatch: bool,
    },
    /// Serve rollouts on stdin/stdout for a process pool.
    #[command(hide = true)]
    Worker {
        #[arg(long)]
        id: u32,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenScenarios { grid, count, length, attack_rate, seed, level, out } => {
            commands::gen_scenarios(&grid, count, length, attack_rate, seed, level.as_deref(), &out)
        }
        Command::Train { run, resume } => commands::train(&run, resume),
        Command::Evaluate { checkpoint, grid, scenarios, k, do_nothing, max_steps, gamma, include_redispatch, output } => {
            commands::evaluate(&commands::EvalArgs {
                checkpoint,
                grid,
                scenarios,
                ks: k,
                do_nothing,
                max_steps,
                gamma,
                include_redispatch,
                output,
            })
        }
        Command::AblateK { run, resume } => commands::ablate_k(&run, resume),
        Command::Replay { log, scenario, summary } => commands::replay(&log, scenario.as_deref(), summary),
        Command::DumpCatalogue { grid, include_redispatch } => commands::dump_catalogue(&grid, include_redispatch),
        Command::Worker { id } => commands::worker(id),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", commands::error_line(&e));
            ExitCode::FAILURE
        }
    }
}
