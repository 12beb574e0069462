//! Error taxonomy shared across the crate.

use thiserror::Error;

/// Errors raised by construction, synthesis and measurement operations.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// A stimulus level falls outside the DUT domain.
    #[error("stimulus level {level} outside domain [{lo}, {hi}]")]
    Domain { level: f64, lo: f64, hi: f64 },

    /// Invalid argument combination (inverted bounds, duplicate nodes, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A weighting or schedule cannot be designed from the given inputs.
    #[error("design error: {0}")]
    Design(String),

    /// The constrained moment system is rank-deficient.
    #[error("singular moment system: moment of degree {degree} is not independent")]
    SingularMoments { degree: usize },

    /// Dynamic-stimulus packing is unbalanced: total rise differs from total fall.
    #[error("unbalanced packing: ascending mass {rise} vs descending mass {fall}")]
    Packing { rise: f64, fall: f64 },

    /// Control sweep rate exceeds the aliasing limit pi/(T*omega_B).
    #[error("sweep rate {rate} exceeds aliasing limit {limit} (= margin x pi/(T x omega_B))")]
    Aliasing { rate: f64, limit: f64 },

    /// A level required by the weighting is never visited by the schedule.
    #[error("coverage error: level {level} carries weight but is never visited")]
    Coverage { level: f64 },

    /// Sample stream and schedule segment boundaries do not line up.
    #[error("alignment error: {0}")]
    Alignment(String),

    /// A resolution/length budget was exhausted before the accuracy target.
    #[error("resolution error: {0}")]
    Resolution(String),
}

pub type Result<T> = std::result::Result<T, Error>;
