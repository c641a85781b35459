use serde::Serialize;

use super::run::Trajectory;
use crate::error::{Error, Result};

/// `∫‖z‖² / ∫‖w‖²` over the whole run.
pub fn hinf_ratio(traj: &Trajectory) -> Result<f64> {
    let z = traj.int_z2.last().copied().unwrap_or(0.0);
    let w = traj.int_w2.last().copied().unwrap_or(0.0);
    if w < 1e-15 {
        return Err(Error::ZeroDisturbance);
    }
    Ok(z / w)
}

/// First grid time after which `series ≤ tol` for the rest of the run.
pub fn settling_time(times: &[f64], series: &[f64], tol: f64) -> Option<f64> {
    match series.iter().rposition(|&v| v > tol) {
        None => times.first().copied(),
        Some(i) if i + 1 < times.len() => Some(times[i + 1]),
        Some(_) => None,
    }
}

/// Settling of `‖e(t)‖`; `None` when it never stays below `tol`.
pub fn detect_settling(traj: &Trajectory, tol: f64) -> Option<f64> {
    settling_time(&traj.times, &traj.e_norm, tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RazumikhinReport {
    pub eligible: usize,
    pub satisfied: usize,
    /// Largest `V̇ − qV^{1/α}` over the eligible points.
    pub worst_excess: f64,
}

impl RazumikhinReport {
    pub fn fraction(&self) -> f64 {
        if self.eligible == 0 {
            1.0
        } else {
            self.satisfied as f64 / self.eligible as f64
        }
    }
}

/// Samples `V̇ ≤ q·V^{1/α} + tol` at interior grid points where `V(t)`
/// dominates `V` over `[t − d, t]`; before `t = 0` the window sees `V(0)`.
/// `V̇` is a central difference on the output grid.
pub fn razumikhin_check(traj: &Trajectory, q: f64, alpha: f64, d: f64, tol: f64) -> RazumikhinReport {
    let t = &traj.times;
    let v = &traj.v;
    let mut report = RazumikhinReport {
        eligible: 0,
        satisfied: 0,
        worst_excess: f64::NEG_INFINITY,
    };
    if t.len() < 3 {
        return report;
    }
    let v0 = v[0];
    let mut start = 0;
    for k in 1..t.len() - 1 {
        while t[start] < t[k] - d - 1e-12 {
            start += 1;
        }
        let mut window_max = v[start..=k].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if t[k] - d < 0.0 {
            window_max = window_max.max(v0);
        }
        if v[k] < window_max {
            continue;
        }
        report.eligible += 1;
        let vdot = (v[k + 1] - v[k - 1]) / (t[k + 1] - t[k - 1]);
        let excess = vdot - q * v[k].powf(1.0 / alpha);
        report.worst_excess = report.worst_excess.max(excess);
        if excess <= tol {
            report.satisfied += 1;
        }
    }
    report
}

/// Least-squares slope of `y` against `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(times: Vec<f64>, e: Vec<f64>) -> Trajectory {
        Trajectory {
            v: e.clone(),
            e_norm: e,
            times,
            ..Default::default()
        }
    }

    #[test]
    fn settling_examples() {
        let t = traj(vec![0.0, 1.0, 2.0], vec![0.0, 0.0, 0.0]);
        assert_eq!(detect_settling(&t, 1e-2), Some(0.0));
        let t = traj(vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 0.5, 0.005, 0.001]);
        assert_eq!(detect_settling(&t, 1e-2), Some(2.0));
        let t = traj(vec![0.0, 1.0], vec![1.0, 0.5]);
        assert_eq!(detect_settling(&t, 1e-2), None);
    }

    #[test]
    fn ratio_requires_disturbance() {
        let mut t = traj(vec![0.0, 1.0], vec![0.0, 0.0]);
        t.int_z2 = vec![0.0, 0.0];
        t.int_w2 = vec![0.0, 0.0];
        assert!(matches!(hinf_ratio(&t), Err(Error::ZeroDisturbance)));
        t.int_w2 = vec![0.0, 2.0];
        assert_eq!(hinf_ratio(&t).unwrap(), 0.0);
    }

    #[test]
    fn razumikhin_on_exact_growth() {
        // V = (1 + t)^6 solves V̇ = 6 V^{5/6}, i.e. q = 6, α = 6/5; every point
        // of an increasing V is eligible.
        let times: Vec<f64> = (0..=200).map(|k| k as f64 * 0.01).collect();
        let v: Vec<f64> = times.iter().map(|t| (1.0 + t).powi(6)).collect();
        let t = traj(times, v);
        let rep = razumikhin_check(&t, 6.0, 1.2, 0.3, 0.1);
        assert_eq!(rep.eligible, 199);
        assert_eq!(rep.satisfied, rep.eligible);
        assert!(razumikhin_check(&t, 5.0, 1.2, 0.3, 0.1).fraction() < 0.01);
    }

    #[test]
    fn decreasing_v_is_rarely_eligible() {
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.01).collect();
        let v: Vec<f64> = times.iter().map(|t| (-t).exp()).collect();
        let rep = razumikhin_check(&traj(times, v), -1.0, 1.2, 0.3, 1e-3);
        assert_eq!(rep.eligible, 0);
        assert_eq!(rep.fraction(), 1.0);
    }

    #[test]
    fn slope_of_line() {
        assert!((slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]) - 2.0).abs() < 1e-15);
    }
}
