//! Command-line driver: parses a TOML config, assembles the problem
//! instance, dispatches a subcommand, and writes deterministic artifacts
//! plus a manifest into the output directory.
//!
//! Exit codes: 0 success, 1 failed condition checks, 2 config errors,
//! 3 numeric errors, 4 comparison hypotheses not met.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pide_cli::config::RunConfig;
use pide_cli::{commands, CliError, Invocation};

#[derive(Parser)]
#[command(name = "pide", version, about = "Solvers and verification harness for jump-operator integro-differential equations")]
struct Cli {
    /// Path to the TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the config's output.dir).
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Top-level seed for all randomness.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Worker threads (0 = library default). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Skip the condition prechecks.
    #[arg(long, global = true, default_value_t = false)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every condition validator and report pass/fail per condition.
    CheckConditions,
    /// Solve the stationary Dirichlet problem.
    SolveStationary,
    /// March the evolutionary problem to its horizon.
    SolveEvolution,
    /// Check the sub/supersolution ordering on solver-produced pairs.
    VerifyComparison {
        /// Swap the roles of the pair to demonstrate the hypothesis check.
        #[arg(long, default_value_t = false)]
        swap: bool,
    },
    /// Tabulate the split-vs-full operator gap on smooth test functions.
    StudyEquivalence,
    /// Cross-validate the PDE solution against the jump-process Monte Carlo.
    McValidate,
    /// Evaluate the Lévy operator on a configured function over points.
    OperatorTable,
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("--config PATH is required"))?;
    let config = RunConfig::load(config_path)?;
    let out_dir = cli
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.output.dir));
    let inv = Invocation {
        config,
        seed: cli.seed,
        threads: cli.threads,
        force: cli.force,
    };

    let dispatch = || -> Result<u8, CliError> {
        match &cli.command {
            Command::CheckConditions => commands::check_conditions(&inv, &out_dir),
            Command::SolveStationary => commands::solve_stationary_cmd(&inv, &out_dir),
            Command::SolveEvolution => commands::solve_evolution_cmd(&inv, &out_dir),
            Command::VerifyComparison { swap } => {
                commands::verify_comparison_cmd(&inv, &out_dir, *swap)
            }
            Command::StudyEquivalence => commands::study_equivalence_cmd(&inv, &out_dir),
            Command::McValidate => commands::mc_validate_cmd(&inv, &out_dir),
            Command::OperatorTable => commands::operator_table_cmd(&inv, &out_dir),
        }
    };

    if inv.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(inv.threads)
            .build()
            .map_err(|e| CliError::numeric(format!("thread pool: {e}")))?;
        pool.install(dispatch)
    } else {
        dispatch()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.exit)
        }
    }
}
