//! Fixed-step integration of the delayed closed loop and trajectory metrics.

pub mod closed_loop;
pub mod delay;
pub mod history;
pub mod integrate;
pub mod metrics;
pub mod run;

pub use closed_loop::ClosedLoop;
pub use delay::{DelayFn, DelayProfile, LinkDelay};
pub use history::{HistoryBuffer, InitialFunction};
pub use integrate::{step_deterministic, step_stochastic, DelaySystem, FnSde, FnSystem, StochasticSystem};
pub use metrics::{detect_settling, hinf_ratio, razumikhin_check, settling_time, RazumikhinReport};
pub use run::{grid_times, monte_carlo, run_scenario, MonteCarlo, RunSettings, Trajectory};
