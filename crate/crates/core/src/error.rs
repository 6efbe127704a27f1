use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("unknown {what}: {name}")]
    Unknown { what: &'static str, name: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Schedule parameters that would break the monotonicity invariants.
    #[error("non-monotone schedule: {0}")]
    NonMonotone(String),

    #[error("no reverse transition out of time index {0}")]
    NoTransition(usize),

    #[error("covariance of component {component} rejected: {reason}")]
    BadCovariance { component: usize, reason: String },

    #[error("mixture weights invalid: {0}")]
    BadWeights(String),

    #[error("operator {operator} is not linear")]
    NotLinear { operator: String },

    #[error("singular system in {0}")]
    Singular(&'static str),

    #[error("non-finite value in {solver} at step {step}, iteration {iteration}")]
    NonFinite {
        solver: &'static str,
        step: usize,
        iteration: usize,
    },

    #[error("{solver} diverged at step {step}: |x| = {norm:e}")]
    Diverged {
        solver: &'static str,
        step: usize,
        norm: f64,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn check_dim(expected: usize, actual: usize, context: &'static str) -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                actual,
                context,
            })
        }
    }

    /// True for failures raised while a solver trajectory was running.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Diverged { .. })
    }
}
