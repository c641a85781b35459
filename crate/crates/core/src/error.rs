use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("topology is neither undirected nor balanced and strongly connected")]
    NotClassifiable,
    #[error("zero eigenvalue of the Laplacian is not simple (graph not connected)")]
    DegenerateSpectrum,
    #[error("matrix is rank deficient (condition number of A·Aᵀ = {cond:e})")]
    RankDeficient { cond: f64 },
    #[error("reduced inertia matrix SᵀM_cS is singular")]
    SingularInertia,
    #[error("input gain of agent {agent} is not invertible (condition number {cond:e})")]
    SingularInputGain { agent: usize, cond: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("disturbance attenuation gamma = {0} must exceed 1")]
    GammaTooSmall(f64),
    #[error("criteria infeasible (q = {q})")]
    Infeasible { q: f64 },
    #[error("leader-follower correction matrix is singular")]
    SingularCorrection,
    #[error("history query at t = {t} outside buffered span [{start}, {end}]")]
    OutOfSpan { t: f64, start: f64, end: f64 },
    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("delay {tau} on link {from}->{to} at t = {t} exceeds bound d = {bound}")]
    DelayBoundViolated {
        from: usize,
        to: usize,
        t: f64,
        tau: f64,
        bound: f64,
    },
    #[error("disturbance energy is zero; H-infinity ratio undefined")]
    ZeroDisturbance,
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 validation, 3 infeasible, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::DimensionMismatch(_)
            | Error::NotClassifiable
            | Error::DegenerateSpectrum
            | Error::DelayBoundViolated { .. } => 2,
            Error::GammaTooSmall(_) | Error::Infeasible { .. } => 3,
            Error::Io(_) => 1,
            _ => 4,
        }
    }
}
