use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `τ(t)` for one link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DelayFn {
    Constant { value: f64 },
    /// `c0 + c1·e^{−t}`.
    ExpDecay { c0: f64, c1: f64 },
}

impl DelayFn {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            DelayFn::Constant { value } => value,
            DelayFn::ExpDecay { c0, c1 } => c0 + c1 * (-t).exp(),
        }
    }

    /// `sup_{t ≥ 0} τ(t)`.
    pub fn sup(&self) -> f64 {
        match *self {
            DelayFn::Constant { value } => value,
            DelayFn::ExpDecay { c0, c1 } => c0 + c1.max(0.0),
        }
    }

    /// `inf_{t ≥ 0} τ(t)`.
    pub fn inf(&self) -> f64 {
        match *self {
            DelayFn::Constant { value } => value,
            DelayFn::ExpDecay { c0, c1 } => c0 + c1.min(0.0),
        }
    }

    /// Same shape with every coefficient multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        match *self {
            DelayFn::Constant { value } => DelayFn::Constant { value: value * k },
            DelayFn::ExpDecay { c0, c1 } => DelayFn::ExpDecay { c0: c0 * k, c1: c1 * k },
        }
    }
}

/// Per-link overrides on top of a default link delay; agents are 1-based
/// in `overrides` (`(to, from)`: agent `to` receives from `from`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayProfile {
    pub default: DelayFn,
    #[serde(default)]
    pub overrides: Vec<LinkDelay>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDelay {
    pub to: usize,
    pub from: usize,
    pub delay: DelayFn,
}

impl DelayProfile {
    pub fn uniform(f: DelayFn) -> Self {
        Self {
            default: f,
            overrides: Vec::new(),
        }
    }

    /// Zero-based `(i, j)`: agent `i` receives from `j`.
    pub fn link(&self, i: usize, j: usize) -> &DelayFn {
        self.overrides
            .iter()
            .find(|o| o.to == i + 1 && o.from == j + 1)
            .map(|o| &o.delay)
            .unwrap_or(&self.default)
    }

    pub fn tau(&self, i: usize, j: usize, t: f64) -> f64 {
        self.link(i, j).eval(t)
    }

    fn all(&self) -> impl Iterator<Item = &DelayFn> {
        std::iter::once(&self.default).chain(self.overrides.iter().map(|o| &o.delay))
    }

    pub fn sup(&self) -> f64 {
        self.all().map(DelayFn::sup).fold(0.0, f64::max)
    }

    pub fn inf(&self) -> f64 {
        self.all().map(DelayFn::inf).fold(f64::INFINITY, f64::min)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            default: self.default.scaled(k),
            overrides: self
                .overrides
                .iter()
                .map(|o| LinkDelay {
                    delay: o.delay.scaled(k),
                    ..*o
                })
                .collect(),
        }
    }

    /// Errors if any link in `adjacency` has `τ_ij(t) > d` or `τ_ij(t) < 0`.
    pub fn check(&self, adjacency: &nalgebra::DMatrix<f64>, t: f64, d: f64) -> Result<()> {
        let n = adjacency.nrows();
        for i in 0..n {
            for j in 0..n {
                if adjacency[(i, j)] == 0.0 {
                    continue;
                }
                let tau = self.tau(i, j, t);
                if tau > d * (1.0 + 1e-12) || tau < 0.0 || !tau.is_finite() {
                    return Err(Error::DelayBoundViolated {
                        from: j + 1,
                        to: i + 1,
                        t,
                        tau,
                        bound: d,
                    });
                }
            }
        }
        Ok(())
    }
}
