use thiserror::Error;

pub type Result<T> = std::result::Result<T, SsglError>;

#[derive(Debug, Error)]
pub enum SsglError {
    #[error("group `{group}` is rank deficient: numerical rank {rank} < {size} columns")]
    RankDeficientGroup {
        group: String,
        rank: usize,
        size: usize,
    },

    #[error("group `{group}` has {size} columns but only {n} samples")]
    SampleTooSmall { group: String, n: usize, size: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("response has zero variance")]
    ZeroVariance,

    #[error("covariate `{covariate}` has {distinct} distinct values, need at least {required}")]
    TooFewDistinctValues {
        covariate: String,
        distinct: usize,
        required: usize,
    },

    #[error("nodewise regression for column {column} is degenerate (tau^2 = {tau2:e})")]
    DegenerateColumn { column: usize, tau2: f64 },

    #[error("coordinate descent did not converge within {0} iterations")]
    MaxIterExceeded(usize),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SsglError {
    /// True for errors caused by bad input or configuration rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            SsglError::DimensionMismatch(_)
                | SsglError::InvalidConfig(_)
                | SsglError::Parse { .. }
                | SsglError::Io(_)
                | SsglError::Json(_)
                | SsglError::TooFewDistinctValues { .. }
                | SsglError::SampleTooSmall { .. }
        )
    }
}
