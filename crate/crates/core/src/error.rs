use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("node `{node}` has no DC path to ground")]
    FloatingNode { node: String },

    #[error("circuit has no source and no initial condition")]
    NoExcitation,

    #[error(
        "coupled pair `{element}` is not passive: |M| = {mutual:.4e} H, sqrt(L1*L2) = {limit:.4e} H"
    )]
    NonPassiveCoupling {
        element: String,
        mutual: f64,
        limit: f64,
    },

    #[error("newton iteration did not converge at t = {time:.6e} s (worst residual {residual:.3e} at `{unknown}`)")]
    NonConvergence {
        time: f64,
        unknown: String,
        residual: f64,
    },

    #[error("non-finite value in `{unknown}` at t = {time:.6e} s")]
    NonFinite { time: f64, unknown: String },

    #[error("unknown channel `{0}`")]
    UnknownChannel(String),

    #[error("measurement window [{t0:.4e}, {t1:.4e}] s lies outside the trace")]
    WindowOutOfRange { t0: f64, t1: f64 },

    #[error("no oscillation detected")]
    NoOscillation,

    #[error("amplitude threshold {threshold} V never reached")]
    ThresholdNotReached { threshold: f64 },

    #[error("no transitions; eye undefined")]
    NoTransitions,

    #[error("trace too short: {reason}")]
    TraceTooShort { reason: String },

    #[error("bit latency ambiguous: shifts {first} and {second} correlate within 5%")]
    AmbiguousLatency { first: usize, second: usize },

    #[error("no input edge found to measure")]
    NoEdges,

    #[error("no handovers between outputs")]
    NoHandovers,
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}

/// Rejects non-finite or non-positive values.
pub(crate) fn require_positive(field: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be > 0, got {value}")))
    }
}

pub(crate) fn require_non_negative(field: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be >= 0, got {value}")))
    }
}
