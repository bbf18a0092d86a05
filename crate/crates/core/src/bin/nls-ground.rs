//! Command-line driver for ground-state experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nls_ground::experiments::{run, RunError, RunOptions, Scenario, EXIT_FAILED};

#[derive(Parser)]
#[command(name = "nls-ground", version, about = "Ground states of coupled NLS systems under mass constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "NLS_GROUND_THREADS")]
    threads: Option<usize>,
    /// Run even when the assumption audit fails.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Compute one ground state.
    Solve(Common),
    /// Ground-state energy over a list of mass bounds.
    SweepRho(Common),
    /// Two-component sweep over the coupling strength.
    SweepBeta(Common),
    /// Check the structural assumptions on the nonlinearity.
    Audit(Common),
    /// Gagliardo-Nirenberg constants.
    Gn(Common),
    /// Compare the ground energy with the compactness threshold.
    Threshold(Common),
    /// Truncated bubble asymptotics.
    Bubbles(Common),
    /// Grid refinement study.
    Refine(Common),
}

impl Command {
    fn split(self) -> (Scenario, Common) {
        match self {
            Command::Solve(c) => (Scenario::Solve, c),
            Command::SweepRho(c) => (Scenario::SweepRho, c),
            Command::SweepBeta(c) => (Scenario::SweepBeta, c),
            Command::Audit(c) => (Scenario::Audit, c),
            Command::Gn(c) => (Scenario::Gn, c),
            Command::Threshold(c) => (Scenario::Threshold, c),
            Command::Bubbles(c) => (Scenario::Bubbles, c),
            Command::Refine(c) => (Scenario::Refine, c),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (scenario, common) = cli.command.split();
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("thread pool: {e}");
            return ExitCode::from(EXIT_FAILED as u8);
        }
    }
    let opts = RunOptions {
        out: common.out,
        seed: common.seed,
        force: common.force,
    };
    match run(scenario, &common.config, &opts) {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("nls-ground {scenario}: {e}");
            ExitCode::from(RunError::exit_code(&e) as u8)
        }
    }
}
