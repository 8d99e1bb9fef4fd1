//! Crate-wide error type and the exit-code table used by the command line.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Config file could not be parsed or failed schema/domain validation.
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("Newton iteration did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// The shooting problem has no isolated periodic solution near the guess.
    #[error("degenerate orbit: {0}")]
    DegenerateOrbit(String),

    #[error("invalid orbit: {0}")]
    InvalidOrbit(String),

    /// Hyperbolicity of the cycle (simple trivial multiplier, others inside the unit circle).
    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("degenerate singular point of G at psi = {psi:.6} (|G''| = {second_derivative:.3e} <= {tolerance:.3e})")]
    NondegeneracyViolation {
        psi: f64,
        second_derivative: f64,
        tolerance: f64,
    },

    #[error("parameters outside the averaging regime: {0}")]
    RegimeViolation(String),

    #[error("trajectory left the neighborhood of the cycle at t = {t:.6} (distance {distance:.3e} > {limit:.3e})")]
    LeftNeighborhood { t: f64, distance: f64, limit: f64 },

    #[error("transit-time bound unavailable: m = {m:.3e} <= m0 = {m0:.3e}")]
    BoundUnavailable { m: f64, m0: f64 },

    #[error("invalid bisection bracket: lower end {lower}, upper end {upper}")]
    BracketFailure { lower: String, upper: String },

    #[error("integration failed at t = {t:.9}: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("non-finite vector field value at t = {t:.9}")]
    InvalidField { t: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("domain violation: {0}")]
    DomainViolation(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Process exit codes, one per error class.
pub mod exit_code {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NO_CONVERGENCE: i32 = 3;
    pub const ASSUMPTION_VIOLATION: i32 = 4;
    pub const INTEGRATION_FAILURE: i32 = 5;
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        use exit_code::*;
        match self {
            Error::Config { .. } | Error::InvalidModel(_) => CONFIG,
            Error::NoConvergence { .. } | Error::DegenerateOrbit(_) | Error::InvalidOrbit(_) => {
                NO_CONVERGENCE
            }
            Error::AssumptionViolation(_)
            | Error::NondegeneracyViolation { .. }
            | Error::RegimeViolation(_)
            | Error::LeftNeighborhood { .. }
            | Error::BoundUnavailable { .. }
            | Error::BracketFailure { .. } => ASSUMPTION_VIOLATION,
            Error::IntegrationFailure { .. } | Error::InvalidField { .. } => INTEGRATION_FAILURE,
            Error::InvalidState(_)
            | Error::DomainViolation(_)
            | Error::ContractViolation(_)
            | Error::Io(_) => INTERNAL,
        }
    }
}
