//! Fractional-power consensus laws and the scalar functions of the error.
//!
//! All laws share the shape `U = −Φ⁻¹(X)[F(X) + feedback]`; the feedback is
//! assembled from `(vᵀv)^{β₁}v` terms with `β₁ = (1 − α)/(2α − 1)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::agents::checked_inverse;
use crate::error::{Error, Result};
use crate::graph::ConsensusProjection;

/// `(1 − α)/(2α − 1)`.
pub fn beta1(alpha: f64) -> f64 {
    (1.0 - alpha) / (2.0 * alpha - 1.0)
}

/// `α/(2α − 1)`.
pub fn beta2(alpha: f64) -> f64 {
    alpha / (2.0 * alpha - 1.0)
}

/// `(vᵀv)^{β₁}`, or 0 for `v = 0` so that the product with `v` stays continuous.
pub fn fractional_scale(norm_sq: f64, alpha: f64) -> f64 {
    if norm_sq == 0.0 {
        0.0
    } else {
        norm_sq.powf(beta1(alpha))
    }
}

/// `(vᵀv)^{β₁}v`; its norm is `‖v‖^{1/(2α−1)}`.
pub fn fractional_term(v: &DVector<f64>, alpha: f64) -> DVector<f64> {
    v * fractional_scale(v.norm_squared(), alpha)
}

/// `e = (M ⊗ I_n)X`, evaluated blockwise.
pub fn consensus_error(proj: &ConsensusProjection, x: &DVector<f64>) -> DVector<f64> {
    let n = proj.n;
    let agents = proj.agents();
    let mut e = DVector::zeros(proj.error_dim());
    for r in 0..agents - 1 {
        for j in 0..agents {
            let mrj = proj.m[(r, j)];
            if mrj != 0.0 {
                for k in 0..n {
                    e[r * n + k] += mrj * x[j * n + k];
                }
            }
        }
    }
    e
}

/// `V = (eᵀe)^{β₂}`.
pub fn lyapunov_value(e: &DVector<f64>, alpha: f64) -> f64 {
    let s = e.norm_squared();
    if s == 0.0 {
        0.0
    } else {
        s.powf(beta2(alpha))
    }
}

/// `z = (eᵀe)^{β₁}e`, so `‖z‖² = V^{1/α}`.
pub fn penalty_signal(e: &DVector<f64>, alpha: f64) -> DVector<f64> {
    fractional_term(e, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlMode {
    FullState,
    PartialAccess,
    LeaderFollower,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelayMode {
    /// Every delayed argument is `X(t − d)`.
    #[default]
    UniformBound,
    /// Neighbor samples use their own link delay `τ_ij(t)`.
    PerLink,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    pub k3: Option<DMatrix<f64>>,
    pub c: Option<DMatrix<f64>>,
    pub alpha: f64,
    pub a: f64,
    pub b: f64,
    pub gamma: Option<f64>,
    pub d: f64,
    pub q_bound: Option<DMatrix<f64>>,
}

impl GainSet {
    pub fn n(&self) -> usize {
        self.k1.nrows()
    }

    pub fn validate(&self, mode: ControlMode) -> Result<()> {
        let n = self.n();
        let square = |m: &DMatrix<f64>, name: &str| {
            if m.shape() == (n, n) {
                Ok(())
            } else {
                Err(Error::DimensionMismatch(format!("{name} must be {n}x{n}, got {:?}", m.shape())))
            }
        };
        square(&self.k1, "K1")?;
        square(&self.k2, "K2")?;
        if !(self.alpha > 1.0) {
            return Err(Error::Validation(format!("alpha must exceed 1, got {}", self.alpha)));
        }
        for (name, v) in [("a", self.a), ("b", self.b), ("d", self.d)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(g) = self.gamma {
            if !(g > 1.0) {
                return Err(Error::GammaTooSmall(g));
            }
        }
        match mode {
            ControlMode::PartialAccess => {
                let c = self
                    .c
                    .as_ref()
                    .ok_or_else(|| Error::Validation("partial access requires C".into()))?;
                let k3 = self
                    .k3
                    .as_ref()
                    .ok_or_else(|| Error::Validation("partial access requires K3".into()))?;
                let l = c.nrows();
                if c.ncols() != n || l == 0 || l > n {
                    return Err(Error::DimensionMismatch(format!("C must be l x {n} with l <= {n}")));
                }
                if crate::linalg::rank(c, 1e-12) != l {
                    return Err(Error::DimensionMismatch("C must have full row rank".into()));
                }
                if k3.shape() != (n, l) {
                    return Err(Error::DimensionMismatch(format!("K3 must be {n}x{l}")));
                }
            }
            ControlMode::LeaderFollower => {
                let k3 = self
                    .k3
                    .as_ref()
                    .ok_or_else(|| Error::Validation("leader-follower requires K3".into()))?;
                square(k3, "K3")?;
            }
            ControlMode::FullState | ControlMode::Stochastic => {}
        }
        Ok(())
    }
}

/// Nominal drift and input gains evaluated at the current state.
#[derive(Debug, Clone, PartialEq)]
pub struct Feedforward {
    pub f: DVector<f64>,
    pub phi: Vec<DMatrix<f64>>,
}

impl Feedforward {
    pub fn n(&self) -> usize {
        self.f.len() / self.phi.len()
    }

    /// `U = −Φ⁻¹(F + v)`, blockwise.
    pub fn close(&self, feedback: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.n();
        let mut u = DVector::zeros(self.f.len());
        for (i, phi) in self.phi.iter().enumerate() {
            let inv = checked_inverse(phi, i + 1)?;
            let rhs = self.f.rows(i * n, n) + feedback.rows(i * n, n);
            u.rows_mut(i * n, n).copy_from(&(-(inv * rhs)));
        }
        Ok(u)
    }
}

/// `(I_N ⊗ K)v` for `v` stacked agent-major.
pub fn blockwise(k: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let (rows, cols) = k.shape();
    let agents = v.len() / cols;
    let mut out = DVector::zeros(agents * rows);
    for i in 0..agents {
        out.rows_mut(i * rows, rows)
            .copy_from(&(k * v.rows(i * cols, cols)));
    }
    out
}

/// `(L ⊗ I_n)v`.
pub fn laplacian_apply(laplacian: &DMatrix<f64>, v: &DVector<f64>, n: usize) -> DVector<f64> {
    let agents = laplacian.nrows();
    let mut out = DVector::zeros(v.len());
    for i in 0..agents {
        for j in 0..agents {
            let lij = laplacian[(i, j)];
            if lij != 0.0 {
                for k in 0..n {
                    out[i * n + k] += lij * v[j * n + k];
                }
            }
        }
    }
    out
}

/// Full-state law with `(L ⊗ I_n)X(t − d)` already formed. `delayed_norm_sq` is
/// the global `X(t − d)ᵀX(t − d)`.
pub fn control_from_delayed_diff(
    x_now: &DVector<f64>,
    lx_delayed: &DVector<f64>,
    delayed_norm_sq: f64,
    ff: &Feedforward,
    gains: &GainSet,
) -> Result<DVector<f64>> {
    let own = blockwise(&gains.k1, &fractional_term(x_now, gains.alpha));
    let scale = fractional_scale(delayed_norm_sq, gains.alpha);
    let coupling = blockwise(&gains.k2, lx_delayed) * scale;
    ff.close(&(own + coupling))
}

/// `U = −Φ⁻¹[F + (I⊗K1)(XᵀX)^{β₁}X + (I⊗K2)(L⊗I)(X_dᵀX_d)^{β₁}X_d]`.
pub fn control_full(
    x_now: &DVector<f64>,
    x_delayed: &DVector<f64>,
    ff: &Feedforward,
    laplacian: &DMatrix<f64>,
    gains: &GainSet,
) -> Result<DVector<f64>> {
    let n = gains.n();
    check_len(x_now, laplacian.nrows() * n)?;
    check_len(x_delayed, laplacian.nrows() * n)?;
    let lx = laplacian_apply(laplacian, x_delayed, n);
    control_from_delayed_diff(x_now, &lx, x_delayed.norm_squared(), ff, gains)
}

/// Per-link variant: agent `i` combines its own `x_i(t − d)` with neighbor
/// samples `x_j(t − τ_ij(t))`. `neighbor(i, j)` returns the latter.
pub fn control_full_per_link(
    x_now: &DVector<f64>,
    x_delayed: &DVector<f64>,
    neighbor: impl Fn(usize, usize) -> DVector<f64>,
    ff: &Feedforward,
    adjacency: &DMatrix<f64>,
    gains: &GainSet,
) -> Result<DVector<f64>> {
    let n = gains.n();
    let agents = adjacency.nrows();
    check_len(x_now, agents * n)?;
    let mut diff = DVector::zeros(agents * n);
    for i in 0..agents {
        let own = x_delayed.rows(i * n, n);
        let mut acc = DVector::zeros(n);
        for j in 0..agents {
            if adjacency[(i, j)] != 0.0 {
                acc += (own - neighbor(i, j)) * adjacency[(i, j)];
            }
        }
        diff.rows_mut(i * n, n).copy_from(&acc);
    }
    control_from_delayed_diff(x_now, &diff, x_delayed.norm_squared(), ff, gains)
}

/// Partial-access law: neighbors are seen only through `y = Cx`.
pub fn control_partial(
    x_now: &DVector<f64>,
    y_delayed: &DVector<f64>,
    ff: &Feedforward,
    laplacian: &DMatrix<f64>,
    gains: &GainSet,
) -> Result<DVector<f64>> {
    let n = gains.n();
    let (c, k3) = match (&gains.c, &gains.k3) {
        (Some(c), Some(k3)) => (c, k3),
        _ => return Err(Error::Validation("partial access requires C and K3".into())),
    };
    let l = c.nrows();
    let agents = laplacian.nrows();
    if c.ncols() != n || k3.shape() != (n, l) {
        return Err(Error::DimensionMismatch(format!(
            "C is {:?} and K3 is {:?} for n = {n}",
            c.shape(),
            k3.shape()
        )));
    }
    check_len(x_now, agents * n)?;
    check_len(y_delayed, agents * l)?;
    let own = blockwise(&gains.k1, &fractional_term(x_now, gains.alpha));
    let ly = laplacian_apply(laplacian, y_delayed, l);
    let scale = fractional_scale(y_delayed.norm_squared(), gains.alpha);
    let coupling = blockwise(k3, &ly) * scale;
    ff.close(&(own + coupling))
}

/// `y = (I_N ⊗ C)x`.
pub fn outputs(c: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    blockwise(c, x)
}

/// Leader law `u₁ = −φ₁⁻¹[f₁ + K3·λ_min(P)^{β₁}(e_lᵀe_l)^{β₁}e_l − ṙ]`,
/// which yields `ė_l = −K3·λ_min(P)^{β₁}(e_lᵀe_l)^{β₁}e_l`.
pub fn control_leader(
    x1: &DVector<f64>,
    r: &DVector<f64>,
    r_dot: &DVector<f64>,
    f1: &DVector<f64>,
    phi1: &DMatrix<f64>,
    k3: &DMatrix<f64>,
    lambda_min_p: f64,
    alpha: f64,
) -> Result<DVector<f64>> {
    let e_l = x1 - r;
    let feedback = k3 * fractional_term(&e_l, alpha) * lambda_min_p.powf(beta1(alpha));
    let inv = checked_inverse(phi1, 1)?;
    Ok(-(inv * (f1 + feedback - r_dot)))
}

/// Leader-follower closed loop: agent 1 tracks `r`, the followers run the
/// full-state law on the disagreement coordinates `X̃ = (M⁺M ⊗ I_n)X`.
#[allow(clippy::too_many_arguments)]
pub fn control_leader_follower(
    x_now: &DVector<f64>,
    x_delayed: &DVector<f64>,
    r: &DVector<f64>,
    r_dot: &DVector<f64>,
    ff: &Feedforward,
    proj: &ConsensusProjection,
    laplacian: &DMatrix<f64>,
    gains: &GainSet,
) -> Result<DVector<f64>> {
    let n = gains.n();
    let k3 = gains
        .k3
        .as_ref()
        .ok_or_else(|| Error::Validation("leader-follower requires K3".into()))?;
    let tilde = disagreement(proj, x_now);
    let tilde_d = disagreement(proj, x_delayed);
    let lx = laplacian_apply(laplacian, &tilde_d, n);
    let mut u = control_from_delayed_diff(&tilde, &lx, tilde_d.norm_squared(), ff, gains)?;
    let lam = crate::linalg::lambda_min(&proj.p);
    let u1 = control_leader(
        &x_now.rows(0, n).into_owned(),
        r,
        r_dot,
        &ff.f.rows(0, n).into_owned(),
        &ff.phi[0],
        k3,
        lam,
        gains.alpha,
    )?;
    u.rows_mut(0, n).copy_from(&u1);
    Ok(u)
}

/// `(M⁺M ⊗ I_n)X`: each block minus the agents' average.
pub fn disagreement(proj: &ConsensusProjection, x: &DVector<f64>) -> DVector<f64> {
    blockwise_mix(&proj.projector(), x, proj.n)
}

/// `(W ⊗ I_n)v` for a square agent-level matrix `W`.
pub fn blockwise_mix(w: &DMatrix<f64>, v: &DVector<f64>, n: usize) -> DVector<f64> {
    laplacian_apply(w, v, n)
}

/// Leader-follower error `ξ = [x₁ − r; (M ⊗ I_n)X]`.
pub fn leader_follower_error(
    proj: &ConsensusProjection,
    x: &DVector<f64>,
    r: &DVector<f64>,
) -> DVector<f64> {
    let n = proj.n;
    let e_f = consensus_error(proj, x);
    let mut xi = DVector::zeros(n + e_f.len());
    xi.rows_mut(0, n).copy_from(&(x.rows(0, n) - r));
    xi.rows_mut(n, e_f.len()).copy_from(&e_f);
    xi
}

fn check_len(v: &DVector<f64>, len: usize) -> Result<()> {
    if v.len() == len {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!("expected length {len}, got {}", v.len())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_consensus_matrix, build_laplacian, Topology};
    use nalgebra::{dmatrix, dvector};

    fn gains(n: usize) -> GainSet {
        GainSet {
            k1: DMatrix::identity(n, n),
            k2: DMatrix::zeros(n, n),
            k3: None,
            c: None,
            alpha: 1.2,
            a: 1.0,
            b: 1.0,
            gamma: Some(1.5),
            d: 0.1,
            q_bound: None,
        }
    }

    fn identity_ff(x: &DVector<f64>, n: usize) -> Feedforward {
        Feedforward {
            f: x.clone(),
            phi: vec![DMatrix::identity(n, n); x.len() / n],
        }
    }

    #[test]
    fn exponents_for_benchmark_alpha() {
        assert!((beta1(1.2) + 1.0 / 7.0).abs() < 1e-15);
        assert!((beta2(1.2) - 6.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn fractional_term_examples() {
        assert_eq!(fractional_term(&dvector![0.0, 0.0], 1.2), dvector![0.0, 0.0]);
        assert_eq!(fractional_term(&dvector![1.0, 0.0], 1.2), dvector![1.0, 0.0]);
        let f = fractional_term(&dvector![3.0, 4.0], 1.2);
        let s = (-25f64.ln() / 7.0).exp();
        assert!((s - 0.631385).abs() < 1e-6);
        assert!((f[0] - 3.0 * s).abs() < 1e-14 && (f[1] - 4.0 * s).abs() < 1e-14);
        assert!((f[0] - 1.89416).abs() < 1e-5 && (f[1] - 2.52554).abs() < 1e-5);
    }

    #[test]
    fn pair_error_example() {
        let t = build_laplacian(&dmatrix![0.0, 1.0; 1.0, 0.0]).unwrap();
        let p = build_consensus_matrix(&t, 1.0, 1).unwrap();
        let e = consensus_error(&p, &dvector![1.0, 0.0]);
        assert!((e[0].abs() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(consensus_error(&p, &dvector![2.5, 2.5]).amax() < 1e-15);
    }

    #[test]
    fn single_agent_example() {
        let lap = DMatrix::zeros(1, 1);
        let x = dvector![1.0, 0.0];
        let u = control_full(&x, &x, &identity_ff(&x, 2), &lap, &gains(2)).unwrap();
        assert!((u - dvector![-2.0, 0.0]).amax() < 1e-15);
    }

    #[test]
    fn equilibrium_and_k2_independence() {
        let t = Topology::benchmark_ring();
        let z = DVector::zeros(8);
        let u = control_full(&z, &z, &identity_ff(&z, 2), &t.laplacian, &gains(2)).unwrap();
        assert_eq!(u, z);
        let x = DVector::from_fn(8, |i, _| (i as f64 * 0.37).sin());
        let xd1 = DVector::from_fn(8, |i, _| (i as f64).cos());
        let xd2 = DVector::from_fn(8, |i, _| i as f64);
        let ff = identity_ff(&x, 2);
        let u1 = control_full(&x, &xd1, &ff, &t.laplacian, &gains(2)).unwrap();
        let u2 = control_full(&x, &xd2, &ff, &t.laplacian, &gains(2)).unwrap();
        assert_eq!(u1, u2);
    }

    #[test]
    fn zero_gains_give_feedback_linearization() {
        let t = Topology::benchmark_ring();
        let mut g = gains(2);
        g.k1 = DMatrix::zeros(2, 2);
        let x = DVector::from_fn(8, |i, _| i as f64 - 3.0);
        let ff = Feedforward {
            f: x.map(|v| v * v),
            phi: vec![dmatrix![2.0, 0.0; 0.0, 4.0]; 4],
        };
        let u = control_full(&x, &x, &ff, &t.laplacian, &g).unwrap();
        for i in 0..8 {
            let phi = if i % 2 == 0 { 2.0 } else { 4.0 };
            assert!((u[i] + ff.f[i] / phi).abs() < 1e-12);
        }
    }

    #[test]
    fn partial_reduces_to_full() {
        let t = Topology::benchmark_ring();
        let mut g = gains(2);
        g.k2 = dmatrix![-5.14, 5.12; 3.55, -2.71];
        g.k3 = Some(g.k2.clone());
        g.c = Some(DMatrix::identity(2, 2));
        let x = DVector::from_fn(8, |i, _| (i as f64 * 1.3).sin());
        let xd = DVector::from_fn(8, |i, _| (i as f64 * 0.7).cos());
        let ff = identity_ff(&x, 2);
        let full = control_full(&x, &xd, &ff, &t.laplacian, &g).unwrap();
        let part = control_partial(&x, &xd, &ff, &t.laplacian, &g).unwrap();
        assert!((full - part).amax() < 1e-12);
        let zero_y = DVector::zeros(8);
        let own_only = control_partial(&x, &zero_y, &ff, &t.laplacian, &g).unwrap();
        g.k2 = DMatrix::zeros(2, 2);
        let no_coupling = control_full(&x, &xd, &ff, &t.laplacian, &g).unwrap();
        assert!((own_only - no_coupling).amax() < 1e-15);
    }

    #[test]
    fn partial_single_channel_matches_dense_assembly() {
        let t = Topology::benchmark_ring();
        let mut g = gains(2);
        g.k1 = DMatrix::zeros(2, 2);
        let c = dmatrix![1.0, 0.0];
        let k3 = dmatrix![0.7; -1.1];
        g.c = Some(c.clone());
        g.k3 = Some(k3.clone());
        let mut xd = DVector::from_fn(8, |i, _| 0.2 * i as f64 + 0.1);
        for i in 0..4 {
            xd[2 * i + 1] = 0.0;
        }
        let y = outputs(&c, &xd);
        let x = DVector::zeros(8);
        let ff = Feedforward {
            f: DVector::zeros(8),
            phi: vec![DMatrix::identity(2, 2); 4],
        };
        let u = control_partial(&x, &y, &ff, &t.laplacian, &g).unwrap();
        let i4 = DMatrix::<f64>::identity(4, 4);
        let dense = i4.kronecker(&k3)
            * t.laplacian.kronecker(&DMatrix::<f64>::identity(1, 1))
            * i4.kronecker(&c)
            * &xd
            * y.norm_squared().powf(beta1(1.2));
        assert!((u + dense).amax() < 1e-12);
    }

    #[test]
    fn leader_examples() {
        let i2 = DMatrix::identity(2, 2);
        let z = DVector::zeros(2);
        let u = control_leader(&dvector![1.0, 0.0], &z, &z, &z, &i2, &i2, 1.0, 1.2).unwrap();
        assert!((u - dvector![-1.0, 0.0]).amax() < 1e-15);
        let r = dvector![0.3, 0.1];
        let rd = dvector![0.5, -0.2];
        let f = dvector![0.1, 0.2];
        let u = control_leader(&r, &r, &rd, &f, &i2, &i2, 4.0, 1.2).unwrap();
        assert!((u - (&rd - &f)).amax() < 1e-15);
        let x1 = dvector![0.8, -0.4];
        let k3 = dmatrix![1.0, 0.5; -0.2, 2.0];
        let u1 = control_leader(&x1, &z, &z, &z, &i2, &k3, 4.0, 1.2).unwrap();
        let u2 = control_leader(&x1, &z, &z, &z, &i2, &(&k3 * 2.0), 4.0, 1.2).unwrap();
        let fb = &k3 * fractional_term(&x1, 1.2) * 4f64.powf(beta1(1.2));
        assert!((&u2 - &u1 + fb).amax() < 1e-14);
    }

    #[test]
    fn lyapunov_and_penalty() {
        assert_eq!(lyapunov_value(&dvector![0.0, 0.0], 1.2), 0.0);
        assert!((lyapunov_value(&dvector![0.6, 0.8], 1.2) - 1.0).abs() < 1e-15);
        let oracle = (6.0 / 7.0 * 4f64.ln()).exp();
        assert!((lyapunov_value(&dvector![2.0, 0.0], 1.2) - oracle).abs() < 1e-12);
        assert!((oracle - 3.28134).abs() < 1e-5);
        let e = dvector![0.6, 0.8];
        assert!((penalty_signal(&e, 1.2) - e).amax() < 1e-15);
        assert_eq!(penalty_signal(&dvector![0.0], 1.2), dvector![0.0]);
    }

    #[test]
    fn per_link_with_uniform_samples_matches_uniform() {
        let t = Topology::benchmark_ring();
        let mut g = gains(2);
        g.k2 = dmatrix![-1.0, 0.5; 0.3, -0.7];
        let x = DVector::from_fn(8, |i, _| (i as f64).sin());
        let xd = DVector::from_fn(8, |i, _| (i as f64 * 0.5).cos());
        let ff = identity_ff(&x, 2);
        let uni = control_full(&x, &xd, &ff, &t.laplacian, &g).unwrap();
        let per = control_full_per_link(
            &x,
            &xd,
            |_, j| xd.rows(2 * j, 2).into_owned(),
            &ff,
            &t.adjacency,
            &g,
        )
        .unwrap();
        assert!((uni - per).amax() < 1e-14);
    }

    #[test]
    fn gain_validation() {
        let mut g = gains(2);
        assert!(g.validate(ControlMode::FullState).is_ok());
        assert!(g.validate(ControlMode::PartialAccess).is_err());
        assert!(g.validate(ControlMode::LeaderFollower).is_err());
        g.gamma = Some(1.0);
        assert!(matches!(g.validate(ControlMode::FullState), Err(Error::GammaTooSmall(_))));
    }
}
