use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// State on `[−d_max, 0]`.
#[derive(Clone)]
pub enum InitialFunction {
    /// Constant extension of the initial state.
    Constant(DVector<f64>),
    Custom(Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>),
}

impl fmt::Debug for InitialFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialFunction::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            InitialFunction::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl InitialFunction {
    pub fn eval(&self, theta: f64) -> DVector<f64> {
        match self {
            InitialFunction::Constant(v) => v.clone(),
            InitialFunction::Custom(f) => f(theta),
        }
    }
}

/// Samples `(t, x)` with strictly increasing `t`, backed by the initial
/// function before the first sample.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    times: VecDeque<f64>,
    states: VecDeque<DVector<f64>>,
    initial: InitialFunction,
    origin: f64,
    d_max: f64,
}

impl HistoryBuffer {
    /// Starts at `t0` with `x(t0) = initial(0)`.
    pub fn new(t0: f64, initial: InitialFunction, d_max: f64) -> Self {
        let x0 = initial.eval(0.0);
        let mut times = VecDeque::new();
        let mut states = VecDeque::new();
        times.push_back(t0);
        states.push_back(x0);
        Self {
            times,
            states,
            initial,
            origin: t0,
            d_max,
        }
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn last_time(&self) -> f64 {
        *self.times.back().expect("history never empty")
    }

    pub fn last_state(&self) -> &DVector<f64> {
        self.states.back().expect("history never empty")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Appends a sample; `t` must exceed the last stored time.
    pub fn push(&mut self, t: f64, x: DVector<f64>) {
        debug_assert!(t > self.last_time(), "history timestamps must increase");
        self.times.push_back(t);
        self.states.push_back(x);
        self.prune();
    }

    /// Drops samples no lookup can reach any more, keeping one sample at or
    /// before `last − d_max` as the left bracket.
    fn prune(&mut self) {
        let horizon = self.last_time() - self.d_max;
        while self.times.len() > 2 && self.times[1] <= horizon {
            self.times.pop_front();
            self.states.pop_front();
        }
    }

    /// True once the initial-function segment has been pruned away.
    fn pruned(&self) -> bool {
        self.times[0] != self.origin
    }

    /// Linear interpolation between bracketing samples, the initial function
    /// before the first sample.
    pub fn sample(&self, t: f64) -> Result<DVector<f64>> {
        let last = self.last_time();
        let eps = 1e-12 * last.abs().max(1.0);
        let first = self.times[0];
        if t > last + eps || t.is_nan() {
            return Err(self.out_of_span(t));
        }
        if t < first {
            if self.pruned() || t < first - self.d_max - eps {
                return Err(self.out_of_span(t));
            }
            return Ok(self.initial.eval(t - first));
        }
        let idx = self.times.partition_point(|&s| s <= t);
        if idx == 0 {
            return Ok(self.states[0].clone());
        }
        let i0 = idx - 1;
        if self.times[i0] == t || i0 + 1 == self.times.len() {
            return Ok(self.states[i0].clone());
        }
        let (t0, t1) = (self.times[i0], self.times[i0 + 1]);
        let w = (t - t0) / (t1 - t0);
        Ok(&self.states[i0] * (1.0 - w) + &self.states[i0 + 1] * w)
    }

    fn out_of_span(&self, t: f64) -> Error {
        let start = if self.pruned() {
            self.times[0]
        } else {
            self.times[0] - self.d_max
        };
        Error::OutOfSpan {
            t,
            start,
            end: self.last_time(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn exact_at_samples_and_linear_between() {
        let mut h = HistoryBuffer::new(0.0, InitialFunction::Constant(dvector![1.0]), 1.0);
        h.push(0.5, dvector![3.0]);
        assert_eq!(h.sample(0.5).unwrap(), dvector![3.0]);
        assert_eq!(h.sample(0.0).unwrap(), dvector![1.0]);
        assert_eq!(h.sample(0.25).unwrap(), dvector![2.0]);
    }

    #[test]
    fn initial_segment_and_span() {
        let f = InitialFunction::Custom(Arc::new(|th| dvector![th]));
        let mut h = HistoryBuffer::new(0.0, f, 1.0);
        h.push(0.1, dvector![0.0]);
        assert_eq!(h.sample(-0.4).unwrap(), dvector![-0.4]);
        assert!(matches!(h.sample(-1.5), Err(Error::OutOfSpan { .. })));
        assert!(matches!(h.sample(0.2), Err(Error::OutOfSpan { .. })));
    }

    #[test]
    fn pruning_keeps_window() {
        let mut h = HistoryBuffer::new(0.0, InitialFunction::Constant(dvector![0.0]), 0.3);
        for k in 1..=100 {
            let t = k as f64 * 0.01;
            h.push(t, dvector![t]);
        }
        assert!(h.len() < 40);
        let v = h.sample(1.0 - 0.3).unwrap();
        assert!((v[0] - 0.7).abs() < 1e-12);
        assert!(h.sample(0.5).is_err());
    }
}
