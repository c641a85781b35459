use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::closed_loop::ClosedLoop;
use super::history::{HistoryBuffer, InitialFunction};
use super::integrate::{step_deterministic, step_stochastic};
use crate::control::penalty_signal;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub step: f64,
    pub horizon: f64,
    /// Record every `output_every`-th step.
    pub output_every: usize,
    /// Root seed of the stochastic stream.
    pub seed: u64,
    /// Stream index within the root seed (Monte-Carlo run number).
    pub run_index: u64,
}

impl RunSettings {
    pub fn steps(&self) -> usize {
        (self.horizon / self.step).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub e_norm: Vec<f64>,
    pub v: Vec<f64>,
    /// `∫‖z‖²` up to each sample.
    pub int_z2: Vec<f64>,
    /// `∫‖w‖²` up to each sample.
    pub int_w2: Vec<f64>,
    /// `(root seed, stream)` for stochastic runs.
    pub seed: Option<(u64, u64)>,
    /// Integrated state `[X; aux]` at the horizon.
    pub final_state: DVector<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `max_i ‖x_i − x_1‖` at every sample.
    pub fn leader_gap(&self, n: usize) -> Vec<f64> {
        self.states
            .iter()
            .map(|x| {
                let agents = x.len() / n;
                let lead = x.rows(0, n);
                (1..agents)
                    .map(|i| (x.rows(i * n, n) - lead).norm())
                    .fold(0.0, f64::max)
            })
            .collect()
    }
}

/// Integrates `cl` from 0 to the horizon starting from `initial`, which also
/// defines the state on `[−d, 0]`.
pub fn run_scenario(cl: &ClosedLoop, settings: &RunSettings, initial: InitialFunction) -> Result<Trajectory> {
    let h = settings.step;
    if !(h > 0.0) || !(settings.horizon >= 0.0) || settings.output_every == 0 {
        return Err(Error::Validation("step must be positive, horizon non-negative".into()));
    }
    let d = cl.gains.d;
    let min_delay = match cl.delay_mode {
        crate::control::DelayMode::UniformBound => d,
        crate::control::DelayMode::PerLink => cl.delays.inf().min(d),
    };
    if h > min_delay * (1.0 + 1e-9) {
        return Err(Error::Validation(format!(
            "step {h} exceeds the smallest delay {min_delay}"
        )));
    }
    let d_max = d.max(cl.delays.sup());
    let mut history = HistoryBuffer::new(0.0, initial, d_max);
    let mut z = history.last_state().clone();
    let alpha = cl.gains.alpha;
    let adjacency = cl.topology.adjacency.clone();

    let mut traj = Trajectory {
        seed: cl.is_stochastic().then_some((settings.seed, settings.run_index)),
        ..Default::default()
    };
    let energy = |t: f64, z: &DVector<f64>| {
        let x = cl.consensus_part(z);
        let zp = penalty_signal(&cl.error(t, &x), alpha).norm_squared();
        (zp, cl.w(t).norm_squared())
    };
    let record = |traj: &mut Trajectory, t: f64, z: &DVector<f64>, hist: &HistoryBuffer, iz: f64, iw: f64| -> Result<()> {
        let x = cl.consensus_part(z);
        let e = cl.error(t, &x);
        traj.times.push(t);
        traj.controls.push(cl.control(t, z, hist)?);
        traj.e_norm.push(e.norm());
        traj.v.push(crate::control::lyapunov_value(&e, alpha));
        traj.int_z2.push(iz);
        traj.int_w2.push(iw);
        traj.states.push(x);
        Ok(())
    };

    cl.delays.check(&adjacency, 0.0, d)?;
    record(&mut traj, 0.0, &z, &history, 0.0, 0.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(settings.run_index);
    let (mut iz, mut iw) = (0.0, 0.0);
    let (mut ez, mut ew) = energy(0.0, &z);
    let steps = settings.steps();
    for k in 0..steps {
        let t = k as f64 * h;
        let t_next = (k + 1) as f64 * h;
        cl.delays.check(&adjacency, t_next, d)?;
        z = if cl.is_stochastic() {
            step_stochastic(cl, &z, &mut history, t, t_next - t, &mut rng)?
        } else {
            step_deterministic(cl, &z, &mut history, t, t_next - t)?
        };
        let (nz, nw) = energy(t_next, &z);
        iz += 0.5 * (ez + nz) * h;
        iw += 0.5 * (ew + nw) * h;
        ez = nz;
        ew = nw;
        if (k + 1) % settings.output_every == 0 || k + 1 == steps {
            record(&mut traj, t_next, &z, &history, iz, iw)?;
        }
    }
    traj.final_state = z;
    Ok(traj)
}

/// Pathwise `‖e(t)‖` statistics on the common output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarlo {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub q05: Vec<f64>,
    pub q95: Vec<f64>,
    pub runs: usize,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * w
}

/// Runs `runs` independent paths; path `k` uses stream `k` of `root_seed`.
pub fn monte_carlo(
    cl: &ClosedLoop,
    settings: &RunSettings,
    initial: InitialFunction,
    runs: usize,
    root_seed: u64,
) -> Result<MonteCarlo> {
    if runs == 0 {
        return Err(Error::Validation("runs must be at least 1".into()));
    }
    let paths: Vec<Vec<f64>> = (0..runs)
        .into_par_iter()
        .map(|k| {
            let s = RunSettings {
                seed: root_seed,
                run_index: k as u64,
                ..*settings
            };
            run_scenario(cl, &s, initial.clone()).map(|t| t.e_norm)
        })
        .collect::<Result<_>>()?;
    let times = grid_times(settings);
    let len = paths[0].len();
    let mut mean = Vec::with_capacity(len);
    let mut q05 = Vec::with_capacity(len);
    let mut q95 = Vec::with_capacity(len);
    let mut column = vec![0.0; runs];
    for i in 0..len {
        for (c, p) in column.iter_mut().zip(&paths) {
            *c = p[i];
        }
        mean.push(column.iter().sum::<f64>() / runs as f64);
        column.sort_by(f64::total_cmp);
        q05.push(quantile(&column, 0.05));
        q95.push(quantile(&column, 0.95));
    }
    Ok(MonteCarlo {
        times,
        mean,
        q05,
        q95,
        runs,
    })
}

/// Output-grid times [`run_scenario`] records for `settings`.
pub fn grid_times(settings: &RunSettings) -> Vec<f64> {
    let steps = settings.steps();
    let mut times = vec![0.0];
    for k in 0..steps {
        if (k + 1) % settings.output_every == 0 || k + 1 == steps {
            times.push((k + 1) as f64 * settings.step);
        }
    }
    times
}
