use thiserror::Error;

use crate::learn::RunDiagnostics;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid reward distribution: {0}")]
    InvalidDistribution(String),

    #[error("transition row for (s={state}, a={action}) is not stochastic (sum = {sum})")]
    NonStochasticRow { state: usize, action: usize, sum: f64 },

    #[error("discount factor must lie strictly inside (0, 1), got {0}")]
    BadGamma(f64),

    #[error("index out of range: {what} = {index}, bound {bound}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("value iteration did not converge within {0} iterations")]
    NonConvergence(u64),

    /// A learner produced a non-finite Q entry. The diagnostics recorded up to
    /// (and including) the offending step are attached.
    #[error("non-finite Q value at step {t}")]
    NonFiniteValue { t: u64, partial: Box<RunDiagnostics> },

    #[error("bad schedule: {0}")]
    BadSchedule(String),

    #[error("perturbation did not vanish: last value {last} above tolerance {tol}")]
    NonVanishingPerturbation { last: f64, tol: f64 },

    #[error("point {0:?} lies outside the unit domain")]
    OutOfDomain(Vec<f64>),

    #[error("unsupported transition model: {0}")]
    UnsupportedTransition(String),

    #[error("ReLU kink hit at state {state}, layer {layer}, unit {unit}")]
    NonSmoothAtPoint { state: usize, layer: usize, unit: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
}
