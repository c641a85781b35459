//! `.scn` files are TOML documents. Every section and its defaults are
//! documented in the README; [`ScenarioFile::echo`] writes the fully
//! resolved form back out.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::agents::{
    AffineAgent, AgentDynamics, DisturbanceGain, DisturbanceModel, NoiseGain, NoiseModel, Signal, SignalVec,
    Unicycle, UnicycleParams,
};
use crate::control::{lyapunov_value, ControlMode, DelayMode, GainSet};
use crate::criteria::{self, CriteriaReport, SearchSpace, Structure, Target};
use crate::error::{Error, Result};
use crate::graph::{build_consensus_matrix, build_laplacian, ConsensusProjection, Topology};
use crate::sim::{ClosedLoop, DelayProfile, InitialFunction, RunSettings};

pub type Rows = Vec<Vec<f64>>;
type Models = Vec<Arc<dyn AgentDynamics>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default = "default_name")]
    pub name: String,
    pub mode: ControlMode,
    #[serde(default)]
    pub delay_mode: DelayMode,
    pub topology: TopologySpec,
    pub model: ModelSpec,
    pub gains: GainsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchSpec>,
    pub delay: DelayProfile,
    #[serde(default)]
    pub disturbance: DisturbanceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceSpec>,
    pub integration: IntegrationSpec,
    #[serde(default)]
    pub criteria: CriteriaSpec,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_row_norm() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub adjacency: Rows,
    #[serde(default = "default_row_norm")]
    pub row_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Unicycle,
    CustomAffine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Unicycle parameters the controller assumes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<UnicycleParams>,
    /// Unicycle parameters actually integrated (defaults to `params`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant_params: Option<UnicycleParams>,
    /// Affine drift matrix `A`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Rows>,
    /// Affine input matrix `B`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Rows>,
    /// One row per agent.
    pub initial: Rows,
    /// Unicycle poses `[x_c, y_c, θ]`, one row per agent (zeros by default).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_pose: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSpec {
    pub alpha: f64,
    pub a: f64,
    pub b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Delay bound; defaults to the supremum of the delay profile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    pub k1: Rows,
    pub k2: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k3: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_bound: Option<Rows>,
}

/// Grid over `scale · seed` gains; seeds default to the fixed gains and empty
/// scalar lists to the fixed scalar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1_seed: Option<Rows>,
    pub k1_scales: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2_seed: Option<Rows>,
    #[serde(default = "unit_scale")]
    pub k2_scales: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k3_seed: Option<Rows>,
    #[serde(default)]
    pub k3_scales: Vec<f64>,
    #[serde(default)]
    pub a: Vec<f64>,
    #[serde(default)]
    pub b: Vec<f64>,
    #[serde(default)]
    pub gamma: Vec<f64>,
}

fn unit_scale() -> Vec<f64> {
    vec![1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    #[serde(default = "default_disturbance_gain")]
    pub gain: DisturbanceGain,
    #[serde(default = "zero_signal")]
    pub w: SignalSpec,
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        Self {
            gain: DisturbanceGain::Zero,
            w: zero_signal(),
        }
    }
}

fn default_disturbance_gain() -> DisturbanceGain {
    DisturbanceGain::Friction
}

fn zero_signal() -> SignalSpec {
    SignalSpec::One(Signal::ZERO)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SignalSpec {
    One(Signal),
    Many(Vec<Signal>),
}

impl SignalSpec {
    pub fn to_vec(&self) -> SignalVec {
        match self {
            SignalSpec::One(s) => SignalVec(vec![*s]),
            SignalSpec::Many(v) => SignalVec(v.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default = "default_noise_gain")]
    pub gain: NoiseGain,
    pub power: f64,
}

fn default_noise_gain() -> NoiseGain {
    NoiseGain::Power
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub signals: SignalSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationSpec {
    pub step: f64,
    pub horizon: f64,
    #[serde(default = "one")]
    pub output_every: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
}

fn one() -> usize {
    1
}

fn default_runs() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriteriaSpec {
    /// Random states at which the disturbance covering is spot-checked.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Box half-width for those states.
    #[serde(default = "default_radius")]
    pub sample_radius: f64,
    #[serde(default = "default_sample_seed")]
    pub sample_seed: u64,
    /// `‖e‖` threshold for the simulated settling time.
    #[serde(default = "default_settle_tol")]
    pub settle_tol: f64,
}

impl Default for CriteriaSpec {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            sample_radius: default_radius(),
            sample_seed: default_sample_seed(),
            settle_tol: default_settle_tol(),
        }
    }
}

fn default_samples() -> usize {
    64
}
fn default_radius() -> f64 {
    2.0
}
fn default_sample_seed() -> u64 {
    1
}
fn default_settle_tol() -> f64 {
    1e-2
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ScenarioFile {
    /// Parses, validates and fills defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            message: e.message().to_string(),
        })?;
        file.resolve()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Fully resolved TOML; parsing it yields an identical file.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    fn resolve(&mut self) -> Result<()> {
        let sup = self.delay.sup();
        let d = *self.gains.d.get_or_insert(sup);
        if sup > d * (1.0 + 1e-12) {
            return Err(Error::Validation(format!(
                "delay exceeds bound d (sup of profile {sup} > d = {d})"
            )));
        }
        if self.target() == Target::Hinf && self.gains.gamma.is_none() {
            return Err(Error::Validation("gamma required".into()));
        }
        if let Some(g) = self.gains.gamma {
            if !(g > 1.0) {
                return Err(Error::Validation(format!("gamma must exceed 1, got {g}")));
            }
        }
        if !(self.gains.alpha > 1.0) {
            return Err(Error::Validation(format!("alpha must exceed 1, got {}", self.gains.alpha)));
        }
        if self.model.kind == ModelKind::Unicycle && self.model.initial_pose.is_none() {
            self.model.initial_pose = Some(vec![vec![0.0; 3]; self.model.initial.len()]);
        }
        if self.mode == ControlMode::Stochastic && self.noise.is_none() {
            return Err(Error::Validation("stochastic mode requires a [noise] section".into()));
        }
        if self.mode == ControlMode::LeaderFollower && self.reference.is_none() {
            return Err(Error::Validation("leader-follower mode requires a [reference] section".into()));
        }
        // Build once to validate dimensions end to end.
        Scenario::build(self.clone())?;
        Ok(())
    }

    pub fn target(&self) -> Target {
        if self.noise.is_some() || self.mode == ControlMode::Stochastic {
            Target::Stochastic
        } else {
            Target::Hinf
        }
    }

    pub fn structure(&self) -> Structure {
        match self.mode {
            ControlMode::PartialAccess => Structure::PartialAccess,
            ControlMode::LeaderFollower => Structure::LeaderFollower,
            ControlMode::FullState | ControlMode::Stochastic => Structure::FullState,
        }
    }
}

pub fn matrix(rows: &Rows, what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map(Vec::len).unwrap_or(0);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::DimensionMismatch(format!("{what} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn rows_of(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn stack(rows: &Rows, width: usize, what: &str) -> Result<DVector<f64>> {
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::DimensionMismatch(format!("every {what} row needs {width} entries")));
    }
    Ok(DVector::from_iterator(
        rows.len() * width,
        rows.iter().flat_map(|r| r.iter().copied()),
    ))
}

/// Runtime form of a scenario.
#[derive(Clone)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub topology: Topology,
    pub proj: ConsensusProjection,
    pub base_gains: GainSet,
    pub search: Option<SearchSpace>,
    pub closed_loop: ClosedLoop,
    pub x0: DVector<f64>,
    pub z0: DVector<f64>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        Self::build(ScenarioFile::load(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::build(ScenarioFile::parse(text)?)
    }

    pub fn build(file: ScenarioFile) -> Result<Self> {
        let adjacency = matrix(&file.topology.adjacency, "adjacency")?;
        let topology = build_laplacian(&adjacency)?;
        let agents = topology.agents();
        let g = &file.gains;
        let k1 = matrix(&g.k1, "K1")?;
        let n = k1.nrows();
        let proj = build_consensus_matrix(&topology, file.topology.row_norm, n)?;
        let d = g.d.unwrap_or_else(|| file.delay.sup());
        let base_gains = GainSet {
            k1,
            k2: matrix(&g.k2, "K2")?,
            k3: g.k3.as_ref().map(|m| matrix(m, "K3")).transpose()?,
            c: g.c.as_ref().map(|m| matrix(m, "C")).transpose()?,
            alpha: g.alpha,
            a: g.a,
            b: g.b,
            gamma: g.gamma,
            d,
            q_bound: g.q_bound.as_ref().map(|m| matrix(m, "Q")).transpose()?,
        };
        base_gains.validate(file.mode)?;

        let (nominal, plant): (Models, Models) = match file.model.kind {
            ModelKind::Unicycle => {
                if n != 2 {
                    return Err(Error::DimensionMismatch("unicycle agents have 2 states".into()));
                }
                let p = file
                    .model
                    .params
                    .ok_or_else(|| Error::Validation("unicycle model requires params".into()))?;
                p.validate()?;
                let pp = file.model.plant_params.unwrap_or(p);
                pp.validate()?;
                (
                    (0..agents).map(|_| Arc::new(Unicycle { params: p }) as Arc<dyn AgentDynamics>).collect(),
                    (0..agents).map(|_| Arc::new(Unicycle { params: pp }) as Arc<dyn AgentDynamics>).collect(),
                )
            }
            ModelKind::CustomAffine => {
                let a = file
                    .model
                    .a
                    .as_ref()
                    .map(|m| matrix(m, "A"))
                    .transpose()?
                    .unwrap_or_else(|| DMatrix::zeros(n, n));
                let b = file
                    .model
                    .b
                    .as_ref()
                    .map(|m| matrix(m, "B"))
                    .transpose()?
                    .unwrap_or_else(|| DMatrix::identity(n, n));
                let agent = AffineAgent::new(a, b)?;
                if agent.state_dim() != n {
                    return Err(Error::DimensionMismatch(format!("affine model must be {n}-dimensional")));
                }
                let models: Vec<Arc<dyn AgentDynamics>> =
                    (0..agents).map(|_| Arc::new(agent.clone()) as Arc<dyn AgentDynamics>).collect();
                (models.clone(), models)
            }
        };

        if file.model.initial.len() != agents {
            return Err(Error::DimensionMismatch(format!("initial needs {agents} rows")));
        }
        let x0 = stack(&file.model.initial, n, "initial")?;
        let aux_dim = plant[0].aux_dim();
        let aux0 = match (&file.model.initial_pose, aux_dim) {
            (_, 0) => DVector::zeros(0),
            (Some(rows), k) => {
                if rows.len() != agents {
                    return Err(Error::DimensionMismatch(format!("initial_pose needs {agents} rows")));
                }
                stack(rows, k, "initial_pose")?
            }
            (None, k) => DVector::zeros(agents * k),
        };

        let disturbance = DisturbanceModel {
            gain: file.disturbance.gain,
            w: file.disturbance.w.to_vec(),
        };
        let noise = file.noise.as_ref().map(|s| NoiseModel {
            gain: s.gain,
            power: s.power,
            alpha: g.alpha,
        });
        if let Some(ns) = &file.noise {
            if !(ns.power >= 0.0) {
                return Err(Error::Validation("noise power must be non-negative".into()));
            }
        }
        let reference = file.reference.as_ref().map(|r| r.signals.to_vec());
        let closed_loop = ClosedLoop::new(
            topology.clone(),
            proj.clone(),
            base_gains.clone(),
            file.mode,
            file.delay_mode,
            file.delay.clone(),
            nominal,
            plant,
            disturbance,
            noise,
            reference,
        )?;
        let z0 = closed_loop.pack(&x0, &aux0)?;

        let search = file.search.as_ref().map(|s| -> Result<SearchSpace> {
            let seed = |m: &Option<Rows>, fallback: &DMatrix<f64>, what: &str| -> Result<DMatrix<f64>> {
                m.as_ref().map(|r| matrix(r, what)).transpose().map(|o| o.unwrap_or_else(|| fallback.clone()))
            };
            let or_fixed = |v: &Vec<f64>, fixed: f64| if v.is_empty() { vec![fixed] } else { v.clone() };
            let k3_seed = match (&s.k3_seed, &base_gains.k3) {
                (Some(r), _) => Some(matrix(r, "K3 seed")?),
                (None, Some(k3)) if !s.k3_scales.is_empty() => Some(k3.clone()),
                _ => None,
            };
            Ok(SearchSpace {
                k1_seed: seed(&s.k1_seed, &base_gains.k1, "K1 seed")?,
                k1_scales: s.k1_scales.clone(),
                k2_seed: seed(&s.k2_seed, &base_gains.k2, "K2 seed")?,
                k2_scales: s.k2_scales.clone(),
                k3_seed,
                k3_scales: s.k3_scales.clone(),
                a: or_fixed(&s.a, base_gains.a),
                b: or_fixed(&s.b, base_gains.b),
                gamma: s.gamma.clone(),
            })
        });
        let search = search.transpose()?;
        if let Some(space) = &search {
            if space.k1_seed.shape() != (n, n) || space.k2_seed.shape() != (n, n) {
                return Err(Error::DimensionMismatch("search seeds must be n x n".into()));
            }
        }

        Ok(Self {
            file,
            topology,
            proj,
            base_gains,
            search,
            closed_loop,
            x0,
            z0,
        })
    }

    pub fn target(&self) -> Target {
        self.file.target()
    }

    pub fn structure(&self) -> Structure {
        self.file.structure()
    }

    pub fn initial_function(&self) -> InitialFunction {
        InitialFunction::Constant(self.z0.clone())
    }

    /// `V(0)` of the scenario's error.
    pub fn v0(&self) -> f64 {
        let e = self.closed_loop.error(0.0, &self.x0);
        lyapunov_value(&e, self.base_gains.alpha)
    }

    pub fn settings(&self) -> RunSettings {
        let i = &self.file.integration;
        RunSettings {
            step: i.step,
            horizon: i.horizon,
            output_every: i.output_every,
            seed: i.seed,
            run_index: 0,
        }
    }

    /// Random states at which the disturbance covering is spot-checked.
    pub fn covering_samples(&self) -> Vec<DVector<f64>> {
        let c = &self.file.criteria;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(c.sample_seed);
        let dim = self.x0.len();
        let mut out = vec![self.x0.clone()];
        for _ in 0..c.samples {
            out.push(DVector::from_fn(dim, |_, _| rng.random_range(-c.sample_radius..=c.sample_radius)));
        }
        out
    }

    /// Criteria for explicit gains.
    pub fn evaluate(&self, gains: &GainSet) -> Result<CriteriaReport> {
        criteria::evaluate(
            self.target(),
            self.structure(),
            &self.proj,
            &self.topology.laplacian,
            &self.closed_loop.disturbance,
            &self.covering_samples(),
            gains,
            self.v0(),
        )
    }

    /// Gains to simulate: synthesized when a search space is given, the
    /// fixed gains otherwise. Also returns the criteria of the fixed gains.
    pub fn resolve_gains(&self) -> Result<ResolvedGains> {
        let fixed = self.evaluate(&self.base_gains)?;
        let Some(space) = &self.search else {
            return Ok(ResolvedGains {
                gains: self.base_gains.clone(),
                report: fixed.clone(),
                fixed,
                synthesis: None,
            });
        };
        let outcome = criteria::synthesize_gains(
            self.target(),
            self.structure(),
            &self.proj,
            &self.topology.laplacian,
            &self.closed_loop.disturbance,
            &self.covering_samples(),
            &self.base_gains,
            space,
            self.v0(),
        );
        match outcome {
            Ok(s) => Ok(ResolvedGains {
                gains: s.gains.clone(),
                report: s.report.clone(),
                fixed,
                synthesis: Some(SynthesisInfo {
                    index: Some(s.index),
                    evaluated: s.evaluated,
                    feasible: s.feasible,
                    best_q: s.report.q,
                }),
            }),
            Err(Error::Infeasible { q }) => Ok(ResolvedGains {
                gains: self.base_gains.clone(),
                report: fixed.clone(),
                fixed,
                synthesis: Some(SynthesisInfo {
                    index: None,
                    evaluated: space.len(),
                    feasible: 0,
                    best_q: q,
                }),
            }),
            Err(e) => Err(e),
        }
    }

    /// Closed loop with different gains.
    pub fn with_gains(&self, gains: &GainSet) -> Result<ClosedLoop> {
        let mut cl = self.closed_loop.clone();
        gains.validate(self.file.mode)?;
        cl.gains = gains.clone();
        Ok(cl)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesisInfo {
    /// Winning candidate; `None` when no candidate was feasible.
    pub index: Option<usize>,
    pub evaluated: usize,
    pub feasible: usize,
    /// `q` of the winner, or the smallest `q` seen when none was feasible.
    pub best_q: f64,
}

#[derive(Debug, Clone)]
pub struct ResolvedGains {
    pub gains: GainSet,
    pub report: CriteriaReport,
    /// Criteria of the gains written in the file.
    pub fixed: CriteriaReport,
    pub synthesis: Option<SynthesisInfo>,
}
