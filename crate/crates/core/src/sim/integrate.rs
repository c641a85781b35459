use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::history::HistoryBuffer;
use crate::error::{Error, Result};

/// `ẋ(t) = f(t, x(t), history)` where delayed arguments are read from the
/// history buffer.
pub trait DelaySystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, x: &DVector<f64>, history: &HistoryBuffer) -> Result<DVector<f64>>;
}

/// `dX = f dt + H(X) dW` with `E[dW dWᵀ] = power·dt·I`.
pub trait StochasticSystem: DelaySystem {
    fn diffusion(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64>;
    fn noise_power(&self) -> f64;
}

/// Closure-backed system, handy for oracles.
pub struct FnSystem<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> DelaySystem for FnSystem<F>
where
    F: Fn(f64, &DVector<f64>, &HistoryBuffer) -> Result<DVector<f64>>,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn rhs(&self, t: f64, x: &DVector<f64>, history: &HistoryBuffer) -> Result<DVector<f64>> {
        (self.f)(t, x, history)
    }
}

/// Closure-backed SDE.
pub struct FnSde<F, G> {
    pub dim: usize,
    pub f: F,
    pub h: G,
    pub power: f64,
}

impl<F, G> DelaySystem for FnSde<F, G>
where
    F: Fn(f64, &DVector<f64>, &HistoryBuffer) -> Result<DVector<f64>>,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn rhs(&self, t: f64, x: &DVector<f64>, history: &HistoryBuffer) -> Result<DVector<f64>> {
        (self.f)(t, x, history)
    }
}

impl<F, G> StochasticSystem for FnSde<F, G>
where
    F: Fn(f64, &DVector<f64>, &HistoryBuffer) -> Result<DVector<f64>>,
    G: Fn(f64, &DVector<f64>) -> DMatrix<f64>,
{
    fn diffusion(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64> {
        (self.h)(t, x)
    }
    fn noise_power(&self) -> f64 {
        self.power
    }
}

fn finite(x: DVector<f64>, t: f64) -> Result<DVector<f64>> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::NonFiniteState { t })
    }
}

/// Classical four-stage step `t → t + h`; delayed arguments are looked up at
/// each stage time from the history, which must already cover them (`h` not
/// above the smallest delay). Appends `(t + h, x⁺)` to the history.
pub fn step_deterministic<S: DelaySystem + ?Sized>(
    sys: &S,
    x: &DVector<f64>,
    history: &mut HistoryBuffer,
    t: f64,
    h: f64,
) -> Result<DVector<f64>> {
    let k1 = sys.rhs(t, x, history)?;
    let k2 = sys.rhs(t + 0.5 * h, &(x + &k1 * (0.5 * h)), history)?;
    let k3 = sys.rhs(t + 0.5 * h, &(x + &k2 * (0.5 * h)), history)?;
    let k4 = sys.rhs(t + h, &(x + &k3 * h), history)?;
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    let next = finite(next, t + h)?;
    history.push(t + h, next.clone());
    Ok(next)
}

/// Euler–Maruyama step with `ΔW ~ N(0, power·h)` per channel.
pub fn step_stochastic<S: StochasticSystem + ?Sized, R: Rng + ?Sized>(
    sys: &S,
    x: &DVector<f64>,
    history: &mut HistoryBuffer,
    t: f64,
    h: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let drift = sys.rhs(t, x, history)?;
    let hm = sys.diffusion(t, x);
    let sd = (sys.noise_power() * h).sqrt();
    let dw = DVector::from_fn(hm.ncols(), |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        z * sd
    });
    let next = x + drift * h + hm * dw;
    let next = finite(next, t + h)?;
    history.push(t + h, next.clone());
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::history::InitialFunction;
    use nalgebra::dvector;
    use rand::SeedableRng;

    #[test]
    fn decay_is_fourth_order() {
        let sys = FnSystem {
            dim: 1,
            f: |_t: f64, x: &DVector<f64>, _h: &HistoryBuffer| Ok(-x),
        };
        let err = |h: f64| {
            let mut hist = HistoryBuffer::new(0.0, InitialFunction::Constant(dvector![1.0]), 0.0);
            let mut x = dvector![1.0];
            let steps = (1.0 / h).round() as usize;
            let mut worst: f64 = 0.0;
            for k in 0..steps {
                let t = k as f64 * h;
                x = step_deterministic(&sys, &x, &mut hist, t, h).unwrap();
                worst = worst.max((x[0] - (-(t + h)).exp()).abs());
            }
            worst
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 16.0).abs() < 3.0, "ratio {ratio}");
    }

    #[test]
    fn non_finite_detected() {
        let sys = FnSystem {
            dim: 1,
            f: |_t: f64, _x: &DVector<f64>, _h: &HistoryBuffer| Ok(dvector![f64::NAN]),
        };
        let mut hist = HistoryBuffer::new(0.0, InitialFunction::Constant(dvector![1.0]), 0.0);
        let r = step_deterministic(&sys, &dvector![1.0], &mut hist, 0.0, 0.1);
        assert!(matches!(r, Err(Error::NonFiniteState { .. })));
    }

    #[test]
    fn zero_noise_matches_explicit_euler() {
        let f = |_t: f64, x: &DVector<f64>, _h: &HistoryBuffer| Ok(-x * 2.0);
        let sde = FnSde {
            dim: 1,
            f,
            h: |_t: f64, _x: &DVector<f64>| DMatrix::zeros(1, 1),
            power: 1.0,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut hist = HistoryBuffer::new(0.0, InitialFunction::Constant(dvector![1.0]), 0.0);
        let mut x = dvector![1.0];
        let h = 0.01;
        for k in 0..100 {
            x = step_stochastic(&sde, &x, &mut hist, k as f64 * h, h, &mut rng).unwrap();
        }
        assert!((x[0] - (1.0f64 - 2.0 * h).powi(100)).abs() < 1e-14);
        assert!((x[0] - (-2.0f64).exp()).abs() < 0.02);
    }
}
