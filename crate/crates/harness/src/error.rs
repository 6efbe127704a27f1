use lmaps_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{solver}: {source}")]
    Solver {
        solver: String,
        #[source]
        source: CoreError,
    },

    #[error(transparent)]
    Core(CoreError),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<CoreError> for HarnessError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::DimensionMismatch { .. } => HarnessError::Dimension(e.to_string()),
            CoreError::Unknown { .. }
            | CoreError::InvalidParameter(_)
            | CoreError::NonMonotone(_)
            | CoreError::BadCovariance { .. }
            | CoreError::BadWeights(_)
            | CoreError::NotLinear { .. } => HarnessError::Config(e.to_string()),
            other => HarnessError::Core(other),
        }
    }
}

impl HarnessError {
    /// Process exit status: 2 for configuration problems, 3 for dimension
    /// mismatches, 4 when a solver diverged, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Dimension(_) => 3,
            HarnessError::Solver { source, .. } if source.is_divergence() => 4,
            HarnessError::Solver {
                source: CoreError::DimensionMismatch { .. },
                ..
            } => 3,
            HarnessError::Core(e) if e.is_divergence() => 4,
            _ => 1,
        }
    }
}
