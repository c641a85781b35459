//! Agent dynamics `ẋ_i = f_i(x_i) + φ_i(x_i)u_i`, the reduced unicycle model
//! and the friction / noise weighting matrices.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::condition_number;

/// Condition-number ceiling for every evaluated input gain.
pub const MAX_INPUT_GAIN_CONDITION: f64 = 1e8;

/// Control-affine agent. `aux` carries passive states that are integrated
/// alongside but never enter the consensus error (unicycle poses).
pub trait AgentDynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn aux_dim(&self) -> usize {
        0
    }
    fn drift(&self, x: &DVector<f64>, aux: &DVector<f64>, t: f64) -> DVector<f64>;
    fn input_gain(&self, x: &DVector<f64>, aux: &DVector<f64>, t: f64) -> DMatrix<f64>;
    fn aux_rate(&self, _x: &DVector<f64>, aux: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(aux.len())
    }
    fn label(&self) -> &str;
}

/// Inverts `φ_i` after the condition-number guard.
pub fn checked_inverse(gain: &DMatrix<f64>, agent: usize) -> Result<DMatrix<f64>> {
    let cond = condition_number(gain);
    if !(cond < MAX_INPUT_GAIN_CONDITION) {
        return Err(Error::SingularInputGain { agent, cond });
    }
    gain.clone()
        .try_inverse()
        .ok_or(Error::SingularInputGain { agent, cond })
}

/// `f(x) = A x`, `φ(x) = B`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineAgent {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl AffineAgent {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || b.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "affine agent needs square A and B of equal size, got {:?} and {:?}",
                a.shape(),
                b.shape()
            )));
        }
        Ok(Self { a, b })
    }

    /// Single integrator `ẋ = u`.
    pub fn integrator(n: usize) -> Self {
        Self {
            a: DMatrix::zeros(n, n),
            b: DMatrix::identity(n, n),
        }
    }
}

impl AgentDynamics for AffineAgent {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn drift(&self, x: &DVector<f64>, _aux: &DVector<f64>, _t: f64) -> DVector<f64> {
        &self.a * x
    }
    fn input_gain(&self, _x: &DVector<f64>, _aux: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        self.b.clone()
    }
    fn label(&self) -> &str {
        "custom-affine"
    }
}

fn default_inertia() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnicycleParams {
    /// Vehicle mass (kg).
    pub m: f64,
    /// Distance parameter between the driving wheels (m).
    #[serde(rename = "R")]
    pub r_axle: f64,
    /// Wheel radius (m).
    #[serde(rename = "r")]
    pub r_wheel: f64,
    /// Center-of-mass offset from the wheel axis (m).
    pub p: f64,
    /// Rotational inertia entry of `M_c`.
    #[serde(default = "default_inertia")]
    pub inertia: f64,
}

impl UnicycleParams {
    pub fn benchmark() -> Self {
        Self {
            m: 10.0,
            r_axle: 0.5,
            r_wheel: 0.05,
            p: 0.04,
            inertia: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("m", self.m),
            ("R", self.r_axle),
            ("r", self.r_wheel),
            ("p", self.p),
            ("inertia", self.inertia),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("unicycle parameter {name} must be positive")));
            }
        }
        Ok(())
    }

    fn inertia_matrix(&self, theta: f64) -> DMatrix<f64> {
        let (s, c) = theta.sin_cos();
        let mp = self.m * self.p;
        dmatrix![
            self.m, 0.0, mp * s;
            0.0, self.m, -mp * c;
            mp * s, -mp * c, self.inertia
        ]
    }

    fn coriolis_matrix(&self, theta: f64, theta_dot: f64) -> DMatrix<f64> {
        let (s, c) = theta.sin_cos();
        let k = self.m * self.p * theta_dot;
        dmatrix![
            0.0, 0.0, k * c;
            0.0, 0.0, k * s;
            0.0, 0.0, 0.0
        ]
    }

    fn input_matrix(&self) -> DMatrix<f64> {
        dmatrix![
            1.0, 1.0;
            self.r_axle, -self.r_axle
        ] / self.r_wheel
    }
}

/// `S(θ)`, the null-space basis of the no-slip constraint.
pub fn velocity_map(theta: f64, p: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    dmatrix![
        c, -p * s;
        s, p * c;
        0.0, 1.0
    ]
}

fn velocity_map_rate(theta: f64, theta_dot: f64, p: f64) -> DMatrix<f64> {
    let (s, c) = theta.sin_cos();
    dmatrix![
        -s, -p * c;
        c, -p * s;
        0.0, 0.0
    ] * theta_dot
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x_c: f64,
    pub y_c: f64,
    pub theta: f64,
}

impl Pose {
    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self {
            x_c: v[0],
            y_c: v[1],
            theta: v[2],
        }
    }

    pub fn to_vector(self) -> DVector<f64> {
        dvector![self.x_c, self.y_c, self.theta]
    }

    /// Heading wrapped to (−π, π] for display.
    pub fn wrapped_theta(&self) -> f64 {
        let mut t = self.theta.rem_euclid(2.0 * PI);
        if t > PI {
            t -= 2.0 * PI;
        }
        t
    }
}

/// Reduced velocity dynamics `ν̇ = drift + input_gain·τ`.
pub fn unicycle_reduced_dynamics(
    params: &UnicycleParams,
    pose: &Pose,
    nu: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let s = velocity_map(pose.theta, params.p);
    let s_dot = velocity_map_rate(pose.theta, nu[1], params.p);
    let mc = params.inertia_matrix(pose.theta);
    let vc = params.coriolis_matrix(pose.theta, nu[1]);
    let reduced = s.transpose() * &mc * &s;
    let inv = reduced.clone().try_inverse().ok_or(Error::SingularInertia)?;
    if condition_number(&reduced) > 1e12 {
        return Err(Error::SingularInertia);
    }
    let coupling = s.transpose() * (&mc * &s_dot + &vc * &s) * nu;
    let drift = -(&inv * coupling);
    let gain = inv * params.input_matrix();
    Ok((drift, gain))
}

/// `q̇ = S(θ)ν`.
pub fn pose_kinematics(pose: &Pose, nu: &DVector<f64>, p: f64) -> DVector<f64> {
    velocity_map(pose.theta, p) * nu
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Unicycle {
    pub params: UnicycleParams,
}

impl AgentDynamics for Unicycle {
    fn state_dim(&self) -> usize {
        2
    }
    fn aux_dim(&self) -> usize {
        3
    }
    fn drift(&self, x: &DVector<f64>, aux: &DVector<f64>, _t: f64) -> DVector<f64> {
        let pose = Pose::from_vector(aux);
        match unicycle_reduced_dynamics(&self.params, &pose, x) {
            Ok((f, _)) => f,
            Err(_) => DVector::from_element(2, f64::NAN),
        }
    }
    fn input_gain(&self, x: &DVector<f64>, aux: &DVector<f64>, _t: f64) -> DMatrix<f64> {
        let pose = Pose::from_vector(aux);
        match unicycle_reduced_dynamics(&self.params, &pose, x) {
            Ok((_, g)) => g,
            Err(_) => DMatrix::zeros(2, 2),
        }
    }
    fn aux_rate(&self, x: &DVector<f64>, aux: &DVector<f64>) -> DVector<f64> {
        pose_kinematics(&Pose::from_vector(aux), x, self.params.p)
    }
    fn label(&self) -> &str {
        "unicycle"
    }
}

/// `G(X) = diag(x²/(1 + x²))`.
pub fn friction_disturbance_gain(x: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(&x.map(|v| v * v / (1.0 + v * v)))
}

/// Sign-preserving power `sgn(x)|x|^p`.
pub fn signed_power(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().powf(p)
    }
}

/// `nN × N` noise gain; agent `i`'s states all load on Wiener channel `i`.
pub fn stochastic_noise_gain(x: &DVector<f64>, alpha: f64, n: usize) -> DMatrix<f64> {
    let agents = x.len() / n;
    let p = alpha / (2.0 * alpha - 1.0);
    let mut h = DMatrix::zeros(x.len(), agents);
    for i in 0..agents {
        for k in 0..n {
            h[(i * n + k, i)] = signed_power(x[i * n + k], p);
        }
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wave {
    Cos,
    Sin,
}

/// `offset + amp·cos(freq·t + phase)` (or `sin`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Signal {
    Constant(f64),
    Sinusoid {
        amp: f64,
        wave: Wave,
        freq: f64,
        phase: f64,
    },
}

impl Signal {
    pub const ZERO: Signal = Signal::Constant(0.0);

    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Signal::Constant(c) => c,
            Signal::Sinusoid { amp, wave, freq, phase } => match wave {
                Wave::Cos => amp * (freq * t + phase).cos(),
                Wave::Sin => amp * (freq * t + phase).sin(),
            },
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            Signal::Constant(_) => 0.0,
            Signal::Sinusoid { amp, wave, freq, phase } => match wave {
                Wave::Cos => -amp * freq * (freq * t + phase).sin(),
                Wave::Sin => amp * freq * (freq * t + phase).cos(),
            },
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Signal::Constant(c) if *c == 0.0) || matches!(self, Signal::Sinusoid { amp, .. } if *amp == 0.0)
    }
}

fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    // products/quotients of numbers and `pi`, e.g. "pi/8", "3*pi/4", "2".
    let mut value = 1.0;
    let mut op = '*';
    let mut token = String::new();
    let apply = |tok: &str, op: char, value: &mut f64| -> Option<()> {
        let t = tok.trim();
        let v = if t.eq_ignore_ascii_case("pi") {
            PI
        } else {
            t.parse::<f64>().ok()?
        };
        match op {
            '*' => *value *= v,
            '/' => *value /= v,
            _ => return None,
        }
        Some(())
    };
    for ch in s.chars() {
        if ch == '*' || ch == '/' {
            apply(&token, op, &mut value)?;
            token.clear();
            op = ch;
        } else {
            token.push(ch);
        }
    }
    apply(&token, op, &mut value)?;
    Some(value)
}

impl FromStr for Signal {
    type Err = String;

    /// Accepts a number (`"1"`, `"-0.5"`) or `[amp]cos(ω t ± φ)` / `sin(...)`
    /// where `φ` may use `pi`, e.g. `"0.7cos(2t-pi/8)"`.
    fn from_str(raw: &str) -> std::result::Result<Self, Self::Err> {
        let s: String = raw.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || format!("cannot parse signal {raw:?}");
        if let Some(v) = parse_number(&s) {
            return Ok(Signal::Constant(v));
        }
        let (pos, wave) = if let Some(p) = s.find("cos(") {
            (p, Wave::Cos)
        } else if let Some(p) = s.find("sin(") {
            (p, Wave::Sin)
        } else {
            return Err(bad());
        };
        let amp = match s[..pos].trim_end_matches('*') {
            "" | "+" => 1.0,
            "-" => -1.0,
            a => parse_number(a).ok_or_else(bad)?,
        };
        let inner = s[pos + 4..].strip_suffix(')').ok_or_else(bad)?;
        let t_pos = inner.find('t').ok_or_else(bad)?;
        let freq = match inner[..t_pos].trim_end_matches('*') {
            "" | "+" => 1.0,
            "-" => -1.0,
            f => parse_number(f).ok_or_else(bad)?,
        };
        let rest = &inner[t_pos + 1..];
        let phase = if rest.is_empty() {
            0.0
        } else if let Some(r) = rest.strip_prefix('+') {
            parse_number(r).ok_or_else(bad)?
        } else if let Some(r) = rest.strip_prefix('-') {
            -parse_number(r).ok_or_else(bad)?
        } else {
            return Err(bad());
        };
        Ok(Signal::Sinusoid { amp, wave, freq, phase })
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Signal::Constant(c) => write!(f, "{c:?}"),
            Signal::Sinusoid { amp, wave, freq, phase } => {
                let w = match wave {
                    Wave::Cos => "cos",
                    Wave::Sin => "sin",
                };
                let sign = if phase < 0.0 { '-' } else { '+' };
                write!(f, "{amp:?}{w}({freq:?}t{sign}{:?})", phase.abs())
            }
        }
    }
}

impl Serialize for Signal {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Signal {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Signal::Constant(v)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// One signal per component, or a single signal broadcast to every component.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalVec(pub Vec<Signal>);

impl SignalVec {
    pub fn component(&self, k: usize) -> &Signal {
        if self.0.len() == 1 {
            &self.0[0]
        } else {
            &self.0[k]
        }
    }

    pub fn value(&self, t: f64, len: usize) -> DVector<f64> {
        DVector::from_fn(len, |k, _| self.component(k).value(t))
    }

    pub fn derivative(&self, t: f64, len: usize) -> DVector<f64> {
        DVector::from_fn(len, |k, _| self.component(k).derivative(t))
    }

    pub fn compatible(&self, len: usize) -> bool {
        self.0.len() == 1 || self.0.len() == len
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(Signal::is_zero)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceGain {
    Friction,
    Identity,
    Zero,
}

/// `G(X)w(t)` with `G` square `nN × nN`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceModel {
    pub gain: DisturbanceGain,
    pub w: SignalVec,
}

impl DisturbanceModel {
    pub fn none() -> Self {
        Self {
            gain: DisturbanceGain::Zero,
            w: SignalVec(vec![Signal::ZERO]),
        }
    }

    pub fn g(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match self.gain {
            DisturbanceGain::Friction => friction_disturbance_gain(x),
            DisturbanceGain::Identity => DMatrix::identity(x.len(), x.len()),
            DisturbanceGain::Zero => DMatrix::zeros(x.len(), x.len()),
        }
    }

    pub fn w(&self, t: f64, len: usize) -> DVector<f64> {
        self.w.value(t, len)
    }

    /// `G(X)w(t)` without forming `G` for the diagonal models.
    pub fn apply(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        let w = self.w(t, x.len());
        match self.gain {
            DisturbanceGain::Friction => x.zip_map(&w, |v, wk| v * v / (1.0 + v * v) * wk),
            DisturbanceGain::Identity => w,
            DisturbanceGain::Zero => DVector::zeros(x.len()),
        }
    }

    /// Scalar `c` with `G(X)G(X)ᵀ ⪯ c·I` for every `X`.
    pub fn gram_bound(&self) -> f64 {
        match self.gain {
            DisturbanceGain::Friction | DisturbanceGain::Identity => 1.0,
            DisturbanceGain::Zero => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseGain {
    /// Signed fractional power of each state on its agent's channel.
    Power,
    /// Each state loads with unit weight on its agent's channel.
    Unit,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub gain: NoiseGain,
    pub power: f64,
    pub alpha: f64,
}

impl NoiseModel {
    pub fn h(&self, x: &DVector<f64>, n: usize) -> DMatrix<f64> {
        match self.gain {
            NoiseGain::Power => stochastic_noise_gain(x, self.alpha, n),
            NoiseGain::Unit => {
                let agents = x.len() / n;
                DMatrix::from_fn(x.len(), agents, |r, c| if r / n == c { 1.0 } else { 0.0 })
            }
            NoiseGain::Zero => DMatrix::zeros(x.len(), x.len() / n),
        }
    }
}
