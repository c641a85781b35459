use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::delay::DelayProfile;
use super::history::HistoryBuffer;
use super::integrate::{DelaySystem, StochasticSystem};
use crate::agents::{AgentDynamics, DisturbanceModel, NoiseModel, SignalVec};
use crate::control::{
    self, consensus_error, leader_follower_error, lyapunov_value, ControlMode, DelayMode, Feedforward,
    GainSet,
};
use crate::error::{Error, Result};
use crate::graph::{ConsensusProjection, Topology};

/// Closed-loop network. The integrated state is `[X; aux]` with `X` the
/// stacked agent states (agent-major) followed by every agent's passive
/// auxiliaries.
#[derive(Clone)]
pub struct ClosedLoop {
    pub topology: Topology,
    pub proj: ConsensusProjection,
    pub gains: GainSet,
    pub mode: ControlMode,
    pub delay_mode: DelayMode,
    pub delays: DelayProfile,
    /// Models the controller cancels.
    pub nominal: Vec<Arc<dyn AgentDynamics>>,
    /// Models that are integrated.
    pub plant: Vec<Arc<dyn AgentDynamics>>,
    pub disturbance: DisturbanceModel,
    pub noise: Option<NoiseModel>,
    pub reference: Option<SignalVec>,
    aux_offsets: Vec<usize>,
    aux_len: usize,
}

impl ClosedLoop {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        topology: Topology,
        proj: ConsensusProjection,
        gains: GainSet,
        mode: ControlMode,
        delay_mode: DelayMode,
        delays: DelayProfile,
        nominal: Vec<Arc<dyn AgentDynamics>>,
        plant: Vec<Arc<dyn AgentDynamics>>,
        disturbance: DisturbanceModel,
        noise: Option<NoiseModel>,
        reference: Option<SignalVec>,
    ) -> Result<Self> {
        let agents = topology.agents();
        let n = gains.n();
        gains.validate(mode)?;
        if nominal.len() != agents || plant.len() != agents {
            return Err(Error::DimensionMismatch(format!(
                "{agents} agents but {} nominal and {} plant models",
                nominal.len(),
                plant.len()
            )));
        }
        if proj.n != n || proj.agents() != agents {
            return Err(Error::DimensionMismatch("projection does not match gains/topology".into()));
        }
        let mut aux_offsets = Vec::with_capacity(agents);
        let mut aux_len = 0;
        for (nom, pl) in nominal.iter().zip(&plant) {
            if nom.state_dim() != n || pl.state_dim() != n || nom.aux_dim() != pl.aux_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "agent models must have state dimension {n} and matching auxiliaries"
                )));
            }
            aux_offsets.push(agents * n + aux_len);
            aux_len += pl.aux_dim();
        }
        if !disturbance.w.compatible(agents * n) {
            return Err(Error::DimensionMismatch("disturbance signal length".into()));
        }
        match (&reference, mode) {
            (None, ControlMode::LeaderFollower) => {
                return Err(Error::Validation("leader-follower requires a reference".into()))
            }
            (Some(r), _) if !r.compatible(n) => {
                return Err(Error::DimensionMismatch("reference length".into()))
            }
            _ => {}
        }
        if mode == ControlMode::Stochastic && noise.is_none() {
            return Err(Error::Validation("stochastic mode requires a noise model".into()));
        }
        Ok(Self {
            topology,
            proj,
            gains,
            mode,
            delay_mode,
            delays,
            nominal,
            plant,
            disturbance,
            noise,
            reference,
            aux_offsets,
            aux_len,
        })
    }

    pub fn n(&self) -> usize {
        self.gains.n()
    }

    pub fn agents(&self) -> usize {
        self.topology.agents()
    }

    pub fn consensus_dim(&self) -> usize {
        self.n() * self.agents()
    }

    pub fn is_stochastic(&self) -> bool {
        self.noise.is_some()
    }

    /// `[X; aux]`.
    pub fn pack(&self, x: &DVector<f64>, aux: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.consensus_dim() || aux.len() != self.aux_len {
            return Err(Error::DimensionMismatch(format!(
                "state needs {} entries and {} auxiliaries",
                self.consensus_dim(),
                self.aux_len
            )));
        }
        let mut z = DVector::zeros(x.len() + aux.len());
        z.rows_mut(0, x.len()).copy_from(x);
        z.rows_mut(x.len(), aux.len()).copy_from(aux);
        Ok(z)
    }

    pub fn consensus_part(&self, z: &DVector<f64>) -> DVector<f64> {
        z.rows(0, self.consensus_dim()).into_owned()
    }

    fn agent_aux(&self, z: &DVector<f64>, i: usize) -> DVector<f64> {
        z.rows(self.aux_offsets[i], self.plant[i].aux_dim()).into_owned()
    }

    fn agent_state(&self, z: &DVector<f64>, i: usize) -> DVector<f64> {
        let n = self.n();
        z.rows(i * n, n).into_owned()
    }

    fn feedforward(&self, t: f64, z: &DVector<f64>) -> Feedforward {
        let n = self.n();
        let mut f = DVector::zeros(self.consensus_dim());
        let mut phi = Vec::with_capacity(self.agents());
        for (i, model) in self.nominal.iter().enumerate() {
            let xi = self.agent_state(z, i);
            let aux = self.agent_aux(z, i);
            f.rows_mut(i * n, n).copy_from(&model.drift(&xi, &aux, t));
            phi.push(model.input_gain(&xi, &aux, t));
        }
        Feedforward { f, phi }
    }

    pub fn reference_at(&self, t: f64) -> Option<(DVector<f64>, DVector<f64>)> {
        self.reference
            .as_ref()
            .map(|r| (r.value(t, self.n()), r.derivative(t, self.n())))
    }

    fn delayed(&self, history: &HistoryBuffer, t: f64) -> Result<DVector<f64>> {
        Ok(self.consensus_part(&history.sample(t)?))
    }

    /// Control input at `(t, z)` with delayed values from `history`.
    pub fn control(&self, t: f64, z: &DVector<f64>, history: &HistoryBuffer) -> Result<DVector<f64>> {
        let x = self.consensus_part(z);
        let ff = self.feedforward(t, z);
        let lap = &self.topology.laplacian;
        let d = self.gains.d;
        let xd = self.delayed(history, t - d)?;
        match self.mode {
            ControlMode::FullState | ControlMode::Stochastic => match self.delay_mode {
                DelayMode::UniformBound => control::control_full(&x, &xd, &ff, lap, &self.gains),
                DelayMode::PerLink => {
                    let n = self.n();
                    let mut samples = vec![None; self.agents() * self.agents()];
                    for i in 0..self.agents() {
                        for j in self.topology.neighbors(i) {
                            let tau = self.delays.tau(i, j, t);
                            let xj = self.delayed(history, t - tau)?;
                            samples[i * self.agents() + j] = Some(xj.rows(j * n, n).into_owned());
                        }
                    }
                    let agents = self.agents();
                    control::control_full_per_link(
                        &x,
                        &xd,
                        |i, j| samples[i * agents + j].clone().unwrap_or_else(|| DVector::zeros(n)),
                        &ff,
                        &self.topology.adjacency,
                        &self.gains,
                    )
                }
            },
            ControlMode::PartialAccess => {
                let c = self.gains.c.as_ref().expect("validated");
                let yd = control::outputs(c, &xd);
                control::control_partial(&x, &yd, &ff, lap, &self.gains)
            }
            ControlMode::LeaderFollower => {
                let (r, rd) = self.reference_at(t).expect("validated");
                control::control_leader_follower(&x, &xd, &r, &rd, &ff, &self.proj, lap, &self.gains)
            }
        }
    }

    /// Consensus error (`ξ` for leader-follower) at `(t, X)`.
    pub fn error(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        match (self.mode, self.reference_at(t)) {
            (ControlMode::LeaderFollower, Some((r, _))) => leader_follower_error(&self.proj, x, &r),
            _ => consensus_error(&self.proj, x),
        }
    }

    pub fn lyapunov(&self, t: f64, x: &DVector<f64>) -> f64 {
        lyapunov_value(&self.error(t, x), self.gains.alpha)
    }

    /// `w(t)`; its length is `nN`.
    pub fn w(&self, t: f64) -> DVector<f64> {
        self.disturbance.w(t, self.consensus_dim())
    }

    /// `H(X)` padded with zero rows for the auxiliaries.
    pub fn diffusion_matrix(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let x = self.consensus_part(z);
        let Some(noise) = &self.noise else {
            return DMatrix::zeros(z.len(), self.agents());
        };
        let h = noise.h(&x, self.n());
        let mut out = DMatrix::zeros(z.len(), h.ncols());
        out.view_mut((0, 0), h.shape()).copy_from(&h);
        out
    }
}

impl DelaySystem for ClosedLoop {
    fn dim(&self) -> usize {
        self.consensus_dim() + self.aux_len
    }

    fn rhs(&self, t: f64, z: &DVector<f64>, history: &HistoryBuffer) -> Result<DVector<f64>> {
        let n = self.n();
        let u = self.control(t, z, history)?;
        let x = self.consensus_part(z);
        let gw = self.disturbance.apply(&x, t);
        let mut dz = DVector::zeros(z.len());
        for (i, model) in self.plant.iter().enumerate() {
            let xi = self.agent_state(z, i);
            let aux = self.agent_aux(z, i);
            let ui = u.rows(i * n, n);
            let xdot = model.drift(&xi, &aux, t) + model.input_gain(&xi, &aux, t) * ui + gw.rows(i * n, n);
            dz.rows_mut(i * n, n).copy_from(&xdot);
            let ad = model.aux_dim();
            if ad > 0 {
                dz.rows_mut(self.aux_offsets[i], ad).copy_from(&model.aux_rate(&xi, &aux));
            }
        }
        Ok(dz)
    }
}

impl StochasticSystem for ClosedLoop {
    fn diffusion(&self, _t: f64, z: &DVector<f64>) -> DMatrix<f64> {
        self.diffusion_matrix(z)
    }

    fn noise_power(&self) -> f64 {
        self.noise.map(|n| n.power).unwrap_or(0.0)
    }
}
