use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ftcons::scenario::{self, Grid, Scenario, SweepParam};
use ftcons::Result;

#[derive(Parser)]
#[command(name = "sim", about = "Finite-time consensus scenarios: criteria, simulation, sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the sufficient conditions (after gain search, if any).
    Check {
        scenario: PathBuf,
        /// Exit with status 3 when the gains are infeasible.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        json: bool,
    },
    /// Simulate and write trajectory.csv, summary.txt and summary.json.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
    },
    /// Re-evaluate over a grid of one parameter (d, a, b, gamma, noise).
    Sweep {
        scenario: PathBuf,
        #[arg(long)]
        param: String,
        /// start:stop:count or a comma-separated list.
        #[arg(long)]
        grid: String,
        /// Only evaluate the criteria, do not simulate.
        #[arg(long)]
        no_sim: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo statistics of ‖e(t)‖ for stochastic scenarios.
    Mc {
        scenario: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        strict: bool,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Check { scenario: path, strict, json } => {
            let scn = Scenario::load(&path)?;
            let summary = scenario::cmd_check(&scn, strict)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&summary).expect("serializes"));
            } else {
                print!("{}", scenario::render_check(&summary));
            }
        }
        Command::Run { scenario: path, out, strict } => {
            let scn = Scenario::load(&path)?;
            let dir = scenario::output_dir(out);
            let outcome = scenario::cmd_run(&scn, Some(&dir), strict)?;
            print!("{}", scenario::render_run(&outcome.summary));
            println!("outputs in {}", dir.display());
        }
        Command::Sweep { scenario: path, param, grid, no_sim, out } => {
            let scn = Scenario::load(&path)?;
            let param: SweepParam = param.parse()?;
            let grid: Grid = grid.parse()?;
            let dir = scenario::output_dir(out);
            let result = scenario::cmd_sweep(&scn, param, &grid, !no_sim, Some(&dir))?;
            print!("{}", scenario::commands::sweep_csv(&result));
            if let Some(g) = result.gamma_star {
                println!("gamma* = {g:.6}");
            }
        }
        Command::Mc { scenario: path, runs, seed, out, strict } => {
            let scn = Scenario::load(&path)?;
            let dir = scenario::output_dir(out);
            let outcome = scenario::cmd_montecarlo(&scn, runs, seed, Some(&dir), strict)?;
            let s = &outcome.summary;
            print!("{}", scenario::render_check(&s.check));
            println!("runs = {}  root seed = {}", s.runs, s.root_seed);
            println!("mean settling time = {:?}", s.mean_settling_time);
            println!("q95 settling time = {:?}", s.q95_settling_time);
            println!("outputs in {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
