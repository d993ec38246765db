use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is too close to singular (smallest singular value {sigma_min:e})")]
    NearSingular { sigma_min: f64 },
    #[error("matrix is ill-conditioned (condition number {cond:e} exceeds {limit:e})")]
    IllConditioned { cond: f64, limit: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: String,
        found: String,
    },
    #[error("assumption {assumption} violated by mode {mode}: {detail}")]
    AssumptionViolated {
        assumption: Assumption,
        /// One-based mode index.
        mode: usize,
        detail: String,
    },
    #[error("invalid value for {field}: {reason}")]
    InvalidValue { field: String, reason: String },
    #[error("invalid switching times: {0}")]
    InvalidTimes(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    /// Stabilizability and detectability of every mode.
    A1,
    /// Zero feedthrough from the control input to the measurement.
    A2,
}

impl std::fmt::Display for Assumption {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Assumption::A1 => f.write_str("A1"),
            Assumption::A2 => f.write_str("A2"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LmiError {
    #[error("unknown constraint {0}")]
    UnknownId(String),
    #[error("assignment has length {found}, registry expects {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("unknown variable {0}")]
    UnknownVariable(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdpError {
    #[error("infeasible{}: best achievable margin {max_margin:.3e}", if *marginal { " at the requested strictness margin" } else { "" })]
    Infeasible { max_margin: f64, marginal: bool },
    #[error("interior-point method failed: {0}")]
    NumericalFailure(String),
    #[error("invalid bisection bracket: {0}")]
    InvalidBracket(String),
    #[error("program has no gamma variable; build it in minimize mode")]
    NotMinimizeMode,
    #[error(transparent)]
    Lmi(#[from] LmiError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("mode {mode}: {source}")]
    Factorization {
        mode: usize,
        #[source]
        source: LinalgError,
    },
    #[error("{context}: {source}")]
    Inversion {
        context: String,
        #[source]
        source: LinalgError,
    },
    #[error("Lyapunov matrix of mode {mode} is not positive definite (min eigenvalue {lambda_min:e})")]
    NotPositiveDefinite { mode: usize, lambda_min: f64 },
    #[error("dwell-time parameters out of domain: {0}")]
    DomainError(String),
    #[error("controller mode {mode} carries no certificate data (H, P, U)")]
    MissingCertificate { mode: usize },
    #[error("controller is incompatible with the plant: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Lmi(#[from] LmiError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("algebraic input loop is ill-posed: max eigenvalue of He(D00 - I) is {lambda_max:e}")]
    IllPosedLoop { lambda_max: f64 },
    #[error("input loop fixed-point iteration did not converge (residual {residual:e})")]
    NoConvergence { residual: f64 },
    #[error("state became non-finite at t = {time}")]
    NonFiniteState { time: f64 },
    #[error("trace carries zero disturbance energy")]
    ZeroDisturbance,
    #[error("no reset matrix for switch {from} -> {to}")]
    MissingReset { from: usize, to: usize },
    #[error("invalid simulation options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

/// Top-level error carrying the module that raised it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("linalg: {0}")]
    Linalg(#[from] LinalgError),
    #[error("lmi: {0}")]
    Lmi(#[from] LmiError),
    #[error("sdp: {0}")]
    Sdp(#[from] SdpError),
    #[error("synth: {0}")]
    Synth(#[from] SynthError),
    #[error("hybridsim: {0}")]
    Sim(#[from] SimError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
