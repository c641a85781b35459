//! Scenario files and the commands of the `sim` binary.

pub mod commands;
pub mod schema;

pub use commands::{
    cmd_check, cmd_montecarlo, cmd_run, cmd_sweep, gamma_star, output_dir, render_check, render_run, trajectory_csv,
    CheckSummary, Grid, MonteCarloOutcome, RunOutcome, RunSummary, SweepParam, SweepResult, SweepRow,
};
pub use schema::{ResolvedGains, Scenario, ScenarioFile};
