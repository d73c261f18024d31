//! Batch-reinforcement-learning toolkit for EV fleet charging coordination.
//!
//! The crate simulates a fleet of commuter EVs whose aggregate charging is
//! steered by a single action (the number of vehicles to charge), trains a
//! fitted Q-iteration agent backed by a from-scratch random-forest regressor,
//! and benchmarks the learned policy against a clairvoyant oracle scheduler.
//!
//! Three case studies are supported:
//! * case 0 — load following against a flat reference power curve,
//! * case 1 — ramp service (deep reduction during an evening window),
//! * case 2 — PV-coincident charging under non-deterministic solar output.

pub mod config;
pub mod env;
pub mod forest;
pub mod fqi;
pub mod oracle;
pub mod profiles;
pub mod report;
pub mod runner;
pub mod seeding;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration: unknown keys, constraint violations, missing inputs.
    #[error("config error: {0}")]
    Config(String),
    /// A sampling or scheduling problem admits no solution under the config.
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// A simulation invariant was breached (e.g. a departure below full SOC).
    #[error("invariant breach: {0}")]
    InvariantBreach(String),
    /// Malformed input file (PV CSV, model file).
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 = config error, 3 = invariant breach.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::InvariantBreach(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Which of the three case studies is being run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseId {
    /// Case 0: follow a flat reference power curve.
    LoadFollow,
    /// Case 1: follow a reference with an evening ramp-down window.
    Ramp,
    /// Case 2: maximize charging coincident with PV generation.
    PvCoincidence,
}

impl CaseId {
    pub fn from_index(i: u32) -> Result<Self> {
        match i {
            0 => Ok(CaseId::LoadFollow),
            1 => Ok(CaseId::Ramp),
            2 => Ok(CaseId::PvCoincidence),
            other => Err(Error::Config(format!("unknown case {other}, expected 0, 1 or 2"))),
        }
    }

    pub fn index(self) -> u32 {
        match self {
            CaseId::LoadFollow => 0,
            CaseId::Ramp => 1,
            CaseId::PvCoincidence => 2,
        }
    }

    /// Case 2 extends the state tuple with the two PV indicators.
    pub fn state_width(self) -> usize {
        match self {
            CaseId::PvCoincidence => 10,
            _ => 8,
        }
    }
}
