//! Delay-dependent feasibility criteria, settling-time bounds and a grid
//! search over gains.
//!
//! Every auxiliary matrix is assembled from its Kronecker structure
//! (`(M ⊗ I)⁺ = M⁺ ⊗ I`, `MM⁺ = I`), which keeps assemblies at agent scale.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::agents::DisturbanceModel;
use crate::control::{beta1, beta2, GainSet};
use crate::error::{Error, Result};
use crate::graph::ConsensusProjection;
use crate::linalg::{self, identity, lambda_max, lambda_min, lambda_min_nonzero};

/// Semidefinite checks pass when `λ_max ≤ SDP_TOL`.
pub const SDP_TOL: f64 = 1e-9;

/// `R = −(M⊗I)(I⊗K1)(M⊗I)⁺`, `S = −(M⊗I)(I⊗K2)(L⊗I)(M⊗I)⁺`, `P = (M⊗I)⁺ᵀ(M⊗I)⁺`.
pub fn build_rsp(
    proj: &ConsensusProjection,
    laplacian: &DMatrix<f64>,
    k1: &DMatrix<f64>,
    k2: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = proj.n;
    check_square(k1, n, "K1")?;
    check_square(k2, n, "K2")?;
    check_laplacian(proj, laplacian)?;
    let r = -(&proj.m * &proj.m_pinv).kronecker(k1);
    let mlm = &proj.m * laplacian * &proj.m_pinv;
    let s = -mlm.kronecker(k2);
    Ok((r, s, proj.p.clone()))
}

/// `S1 = −(M⊗I_n)(I⊗K3)(L⊗I_l)(I⊗C)(M⊗I_n)⁺`, `P1 = (M⊗I_n)⁺ᵀ(I⊗CᵀC)(M⊗I_n)⁺`.
pub fn build_s1p1(
    proj: &ConsensusProjection,
    laplacian: &DMatrix<f64>,
    k3: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = proj.n;
    let l = c.nrows();
    if c.ncols() != n || k3.shape() != (n, l) {
        return Err(Error::DimensionMismatch(format!(
            "C is {:?}, K3 is {:?}, n = {n}",
            c.shape(),
            k3.shape()
        )));
    }
    check_laplacian(proj, laplacian)?;
    let mlm = &proj.m * laplacian * &proj.m_pinv;
    let s1 = -mlm.kronecker(&(k3 * c));
    let p1 = (proj.m_pinv.transpose() * &proj.m_pinv).kronecker(&(c.transpose() * c));
    Ok((s1, p1))
}

/// Leader-follower blocks `A = diag(−K3, A1)`, `B = diag(0, B1)`, `T = [T1; T2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderFollowerMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub t1: DMatrix<f64>,
    pub t2: DMatrix<f64>,
}

pub fn leader_follower_matrices(
    proj: &ConsensusProjection,
    laplacian: &DMatrix<f64>,
    k1: &DMatrix<f64>,
    k2: &DMatrix<f64>,
    k3: &DMatrix<f64>,
) -> Result<LeaderFollowerMatrices> {
    let n = proj.n;
    check_square(k1, n, "K1")?;
    check_square(k2, n, "K2")?;
    check_square(k3, n, "K3")?;
    check_laplacian(proj, laplacian)?;
    let agents = proj.agents();
    let rows = agents - 1;
    let mut du = DMatrix::zeros(agents, agents);
    du[(0, 0)] = 1.0;
    let dubar = identity(agents) - &du;
    let m = &proj.m;
    let mp = &proj.m_pinv;
    let w = m * &du * mp;
    let correction = identity(rows) - &w;
    if linalg::condition_number(&correction) > 1e12 {
        return Err(Error::SingularCorrection);
    }
    let inv = correction.try_inverse().ok_or(Error::SingularCorrection)?;
    let i_n = identity(n);
    let inner = -(m * &dubar * mp).kronecker(k1) + w.kronecker(&i_n);
    let a1 = inv.kronecker(&i_n) * inner;
    let b1 = -(&inv * m * &dubar * laplacian * mp).kronecker(k2);
    let mut e1 = DMatrix::zeros(1, agents);
    e1[(0, 0)] = 1.0;
    let t1 = e1.kronecker(&i_n);
    let t2 = (&inv * m * &dubar).kronecker(&i_n);

    let dim = n * agents;
    let mut a = DMatrix::zeros(dim, dim);
    a.view_mut((0, 0), (n, n)).copy_from(&(-k3));
    a.view_mut((n, n), (n * rows, n * rows)).copy_from(&a1);
    let mut b = DMatrix::zeros(dim, dim);
    b.view_mut((n, n), (n * rows, n * rows)).copy_from(&b1);
    let mut t = DMatrix::zeros(dim, dim);
    t.view_mut((0, 0), (n, dim)).copy_from(&t1);
    t.view_mut((n, 0), (n * rows, dim)).copy_from(&t2);
    Ok(LeaderFollowerMatrices {
        a,
        b,
        t,
        a1,
        b1,
        t1,
        t2,
    })
}

/// λ_max of `β₂λ_min(P)^{β₁}(R + Rᵀ) + a⁻¹SᵀS`, plus the delay terms
/// `(bd/2)(m^{(α−1)/α} + 1) + a(β₂λ_max(P_d)^{β₁})²m^{(α−1)/α}` with `m = dim`.
#[allow(clippy::too_many_arguments)]
pub fn q_core(
    r: &DMatrix<f64>,
    s: &DMatrix<f64>,
    lambda_min_p: f64,
    lambda_max_p_delay: f64,
    gains: &GainSet,
    dim: usize,
) -> Result<f64> {
    let alpha = gains.alpha;
    let b1 = beta1(alpha);
    let b2 = beta2(alpha);
    let arg = (r + r.transpose()) * (b2 * lambda_min_p.powf(b1)) + s.transpose() * s / gains.a;
    linalg::assert_symmetric(&arg, "rate matrix")?;
    let m_pow = (dim as f64).powf((alpha - 1.0) / alpha);
    let delay = gains.b * gains.d / 2.0 * (m_pow + 1.0);
    let coupling = gains.a * (b2 * lambda_max_p_delay.powf(b1)).powi(2) * m_pow;
    Ok(lambda_max(&arg) + delay + coupling)
}

/// Robust rate `q`; needs `γ > 1`.
pub fn hinf_q_value(
    r: &DMatrix<f64>,
    s: &DMatrix<f64>,
    p: &DMatrix<f64>,
    q_bound: &DMatrix<f64>,
    gains: &GainSet,
) -> Result<f64> {
    let gamma = gains
        .gamma
        .ok_or_else(|| Error::Validation("gamma required".into()))?;
    if !(gamma > 1.0) {
        return Err(Error::GammaTooSmall(gamma));
    }
    let core = q_core(r, s, lambda_min(p), lambda_max(p), gains, r.nrows())?;
    Ok(core + lambda_max(q_bound) / (gamma * gamma - 1.0) + 1.0)
}

/// `λ_max(EᵀE) / [λ_min⁺(PE)]^{β₂}` where `PE = E⁺ᵀE⁺`; λ_min is taken over
/// the nonzero spectrum.
pub fn noise_term(error_map: &DMatrix<f64>, p: &DMatrix<f64>, alpha: f64) -> Result<f64> {
    let top = lambda_max(&(error_map.transpose() * error_map));
    let floor = 1e-12 * lambda_max(p).max(1.0);
    let bottom = lambda_min_nonzero(p, floor).ok_or(Error::DegenerateSpectrum)?;
    Ok(top / bottom.powf(beta2(alpha)))
}

/// Stochastic rate `q1`.
pub fn stochastic_q_value(
    r: &DMatrix<f64>,
    s: &DMatrix<f64>,
    p: &DMatrix<f64>,
    proj: &ConsensusProjection,
    gains: &GainSet,
) -> Result<f64> {
    let core = q_core(r, s, lambda_min(p), lambda_max(p), gains, r.nrows())?;
    let pm = proj.m_pinv.transpose() * &proj.m_pinv;
    Ok(core + noise_term(&proj.m, &pm, gains.alpha)?)
}

/// `α/(|q|(α − 1))·V0^{(α−1)/α}`.
pub fn settling_bound(q: f64, alpha: f64, v0: f64) -> Result<f64> {
    if !(q < 0.0) {
        return Err(Error::Infeasible { q });
    }
    if v0 == 0.0 {
        return Ok(0.0);
    }
    Ok(alpha / (q.abs() * (alpha - 1.0)) * v0.powf((alpha - 1.0) / alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Hinf,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    FullState,
    PartialAccess,
    LeaderFollower,
}

/// Signed violation `margin`; the inequality holds when `ok`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Condition {
    pub margin: f64,
    pub ok: bool,
}

impl Condition {
    fn semidefinite(margin: f64) -> Self {
        Self {
            margin,
            ok: margin <= SDP_TOL,
        }
    }
    fn strict(margin: f64) -> Self {
        Self {
            margin,
            ok: margin < 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriteriaReport {
    pub target: Target,
    pub structure: Structure,
    #[serde(skip)]
    pub r: DMatrix<f64>,
    #[serde(skip)]
    pub s: DMatrix<f64>,
    #[serde(skip)]
    pub p: DMatrix<f64>,
    /// `q` (robust) or `q1` (stochastic).
    pub q: f64,
    /// Disturbance covering `E G Gᵀ Eᵀ ⪯ Q` (robust target only).
    pub disturbance_bound: Option<Condition>,
    /// `q < 0`.
    pub rate: Condition,
    /// `λ_min(P)(R + Rᵀ) − bI + Q ⪯ 0` (`Q = 0` for the stochastic target).
    pub delay_lmi: Condition,
    pub settling_bound: Option<f64>,
    pub v0: f64,
    pub d: f64,
    pub lambda_max_q: f64,
}

impl CriteriaReport {
    pub fn feasible(&self) -> bool {
        self.rate.ok && self.delay_lmi.ok && self.disturbance_bound.is_none_or(|c| c.ok)
    }
}

/// The error system the criteria see: rate matrices, the map that carries
/// disturbances into the error, and its dimension.
#[derive(Debug, Clone)]
pub struct ErrorSystem {
    pub structure: Structure,
    pub r: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub lambda_min_p: f64,
    pub lambda_max_p_delay: f64,
    pub error_map: DMatrix<f64>,
}

impl ErrorSystem {
    pub fn new(
        structure: Structure,
        proj: &ConsensusProjection,
        laplacian: &DMatrix<f64>,
        gains: &GainSet,
    ) -> Result<Self> {
        let (r, s, p) = build_rsp(proj, laplacian, &gains.k1, &gains.k2)?;
        let lmin = lambda_min(&p);
        let lmax = lambda_max(&p);
        match structure {
            Structure::FullState => Ok(Self {
                structure,
                r,
                s,
                p,
                lambda_min_p: lmin,
                lambda_max_p_delay: lmax,
                error_map: proj.lifted(),
            }),
            Structure::PartialAccess => {
                let (k3, c) = match (&gains.k3, &gains.c) {
                    (Some(k3), Some(c)) => (k3, c),
                    _ => return Err(Error::Validation("partial access requires C and K3".into())),
                };
                let (s1, p1) = build_s1p1(proj, laplacian, k3, c)?;
                Ok(Self {
                    structure,
                    r,
                    s: s1,
                    p,
                    lambda_min_p: lmin,
                    lambda_max_p_delay: lambda_max(&p1),
                    error_map: proj.lifted(),
                })
            }
            Structure::LeaderFollower => {
                let k3 = gains
                    .k3
                    .as_ref()
                    .ok_or_else(|| Error::Validation("leader-follower requires K3".into()))?;
                let lf = leader_follower_matrices(proj, laplacian, &gains.k1, &gains.k2, k3)?;
                Ok(Self {
                    structure,
                    r: lf.a,
                    s: lf.b,
                    p,
                    lambda_min_p: lmin,
                    lambda_max_p_delay: lmax,
                    error_map: lf.t,
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    fn lmi_margin(&self, b: f64, q: &DMatrix<f64>) -> f64 {
        let arg = (&self.r + self.r.transpose()) * self.lambda_min_p - identity(self.dim()) * b + q;
        lambda_max(&arg)
    }

    /// Default covering matrix `c·EEᵀ`, valid whenever `GGᵀ ⪯ c·I`.
    pub fn analytic_q(&self, gram_bound: f64) -> DMatrix<f64> {
        &self.error_map * self.error_map.transpose() * gram_bound
    }
}

/// Evaluates the robust criteria. `samples` are states at which the
/// covering inequality is additionally spot-checked.
pub fn check_hinf_conditions(
    sys: &ErrorSystem,
    disturbance: &DisturbanceModel,
    samples: &[DVector<f64>],
    gains: &GainSet,
    v0: f64,
) -> Result<CriteriaReport> {
    let q_mat = gains
        .q_bound
        .clone()
        .unwrap_or_else(|| sys.analytic_q(disturbance.gram_bound()));
    if q_mat.shape() != (sys.dim(), sys.dim()) {
        return Err(Error::DimensionMismatch(format!(
            "Q must be {0}x{0}, got {1:?}",
            sys.dim(),
            q_mat.shape()
        )));
    }
    linalg::assert_symmetric(&q_mat, "Q")?;
    let analytic = sys.analytic_q(disturbance.gram_bound());
    let mut cover = lambda_max(&(&analytic - &q_mat));
    for x in samples {
        let eg = &sys.error_map * disturbance.g(x);
        cover = cover.max(lambda_max(&(&eg * eg.transpose() - &q_mat)));
    }
    let gamma = gains
        .gamma
        .ok_or_else(|| Error::Validation("gamma required".into()))?;
    if !(gamma > 1.0) {
        return Err(Error::GammaTooSmall(gamma));
    }
    let lq = lambda_max(&q_mat);
    let q = q_core(&sys.r, &sys.s, sys.lambda_min_p, sys.lambda_max_p_delay, gains, sys.dim())?
        + lq / (gamma * gamma - 1.0)
        + 1.0;
    let lmi = sys.lmi_margin(gains.b, &q_mat);
    Ok(finish(sys, Target::Hinf, q, Some(Condition::semidefinite(cover)), lmi, v0, gains, lq))
}

pub fn check_stochastic_conditions(
    sys: &ErrorSystem,
    gains: &GainSet,
    v0: f64,
) -> Result<CriteriaReport> {
    // E⁺ᵀE⁺ = (EEᵀ)⁻¹ for full row rank E.
    let eet = &sys.error_map * sys.error_map.transpose();
    let pe = eet
        .try_inverse()
        .ok_or(Error::RankDeficient { cond: f64::INFINITY })?;
    let noise = noise_term(&sys.error_map, &pe, gains.alpha)?;
    let q = q_core(&sys.r, &sys.s, sys.lambda_min_p, sys.lambda_max_p_delay, gains, sys.dim())? + noise;
    let zero = DMatrix::zeros(sys.dim(), sys.dim());
    let lmi = sys.lmi_margin(gains.b, &zero);
    Ok(finish(sys, Target::Stochastic, q, None, lmi, v0, gains, 0.0))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    sys: &ErrorSystem,
    target: Target,
    q: f64,
    disturbance_bound: Option<Condition>,
    lmi: f64,
    v0: f64,
    gains: &GainSet,
    lambda_max_q: f64,
) -> CriteriaReport {
    let rate = Condition::strict(q);
    let delay_lmi = Condition::semidefinite(lmi);
    let feasible = rate.ok && delay_lmi.ok && disturbance_bound.is_none_or(|c| c.ok);
    let settling_bound = if feasible {
        settling_bound(q, gains.alpha, v0).ok()
    } else {
        None
    };
    CriteriaReport {
        target,
        structure: sys.structure,
        r: sys.r.clone(),
        s: sys.s.clone(),
        p: sys.p.clone(),
        q,
        disturbance_bound,
        rate,
        delay_lmi,
        settling_bound,
        v0,
        d: gains.d,
        lambda_max_q,
    }
}

/// Criteria for `gains` under the given structure and target.
pub fn evaluate(
    target: Target,
    structure: Structure,
    proj: &ConsensusProjection,
    laplacian: &DMatrix<f64>,
    disturbance: &DisturbanceModel,
    samples: &[DVector<f64>],
    gains: &GainSet,
    v0: f64,
) -> Result<CriteriaReport> {
    let sys = ErrorSystem::new(structure, proj, laplacian, gains)?;
    match target {
        Target::Hinf => check_hinf_conditions(&sys, disturbance, samples, gains, v0),
        Target::Stochastic => check_stochastic_conditions(&sys, gains, v0),
    }
}

/// Structured candidate grid: every gain is `scale · seed`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchSpace {
    pub k1_seed: DMatrix<f64>,
    pub k1_scales: Vec<f64>,
    pub k2_seed: DMatrix<f64>,
    pub k2_scales: Vec<f64>,
    /// Empty seed keeps the base gain set's `K3`.
    pub k3_seed: Option<DMatrix<f64>>,
    pub k3_scales: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl SearchSpace {
    pub fn len(&self) -> usize {
        let k3 = if self.k3_seed.is_some() {
            self.k3_scales.len()
        } else {
            1
        };
        let gamma = if self.gamma.is_empty() { 1 } else { self.gamma.len() };
        self.k1_scales.len() * self.k2_scales.len() * k3 * self.a.len() * self.b.len() * gamma
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Candidate `index` in lexicographic order (K1, K2, K3, a, b, γ).
    pub fn candidate(&self, base: &GainSet, index: usize) -> GainSet {
        let gamma_len = if self.gamma.is_empty() { 1 } else { self.gamma.len() };
        let k3_len = if self.k3_seed.is_some() { self.k3_scales.len() } else { 1 };
        let mut rest = index;
        let ig = rest % gamma_len;
        rest /= gamma_len;
        let ib = rest % self.b.len();
        rest /= self.b.len();
        let ia = rest % self.a.len();
        rest /= self.a.len();
        let i3 = rest % k3_len;
        rest /= k3_len;
        let i2 = rest % self.k2_scales.len();
        rest /= self.k2_scales.len();
        let i1 = rest;
        let mut g = base.clone();
        g.k1 = &self.k1_seed * self.k1_scales[i1];
        g.k2 = &self.k2_seed * self.k2_scales[i2];
        if let Some(seed) = &self.k3_seed {
            g.k3 = Some(seed * self.k3_scales[i3]);
        }
        g.a = self.a[ia];
        g.b = self.b[ib];
        if !self.gamma.is_empty() {
            g.gamma = Some(self.gamma[ig]);
        }
        g
    }
}

/// Outcome of [`synthesize_gains`].
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub gains: GainSet,
    pub report: CriteriaReport,
    pub index: usize,
    pub evaluated: usize,
    pub feasible: usize,
}

/// Exhaustive grid search; the smallest settling bound wins, ties go to the
/// lower candidate index. Runs in parallel, result independent of scheduling.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_gains(
    target: Target,
    structure: Structure,
    proj: &ConsensusProjection,
    laplacian: &DMatrix<f64>,
    disturbance: &DisturbanceModel,
    samples: &[DVector<f64>],
    base: &GainSet,
    space: &SearchSpace,
    v0: f64,
) -> Result<Synthesis> {
    let total = space.len();
    let results: Vec<(usize, f64, f64)> = (0..total)
        .into_par_iter()
        .filter_map(|idx| {
            let g = space.candidate(base, idx);
            let rep = evaluate(target, structure, proj, laplacian, disturbance, samples, &g, v0).ok()?;
            if rep.feasible() {
                Some((idx, rep.settling_bound.unwrap_or(f64::INFINITY), rep.q))
            } else {
                None
            }
        })
        .collect();
    let best = results
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .copied();
    match best {
        Some((idx, _, _)) => {
            let gains = space.candidate(base, idx);
            let report = evaluate(target, structure, proj, laplacian, disturbance, samples, &gains, v0)?;
            Ok(Synthesis {
                gains,
                report,
                index: idx,
                evaluated: total,
                feasible: results.len(),
            })
        }
        None => {
            // Report the least-violating q for diagnostics.
            let q = (0..total)
                .filter_map(|idx| {
                    let g = space.candidate(base, idx);
                    evaluate(target, structure, proj, laplacian, disturbance, samples, &g, v0)
                        .ok()
                        .map(|r| r.q)
                })
                .fold(f64::INFINITY, f64::min);
            Err(Error::Infeasible { q })
        }
    }
}

fn check_square(k: &DMatrix<f64>, n: usize, name: &str) -> Result<()> {
    if k.shape() == (n, n) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!("{name} must be {n}x{n}, got {:?}", k.shape())))
    }
}

fn check_laplacian(proj: &ConsensusProjection, laplacian: &DMatrix<f64>) -> Result<()> {
    let agents = proj.agents();
    if laplacian.shape() == (agents, agents) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "Laplacian must be {agents}x{agents}, got {:?}",
            laplacian.shape()
        )))
    }
}
