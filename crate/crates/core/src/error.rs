use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("covector mu must be nonzero")]
    ZeroCovector,

    #[error("eigenvalue cluster of odd dimension {dim} in spectrum {spectrum:?}")]
    OddCluster { dim: usize, spectrum: Vec<f64> },

    #[error("symplectic normalization failed with residual {residual:e}")]
    SymplecticNormalization { residual: f64 },

    #[error("grid spacing {h} is too coarse (limit {limit})")]
    GridTooCoarse { h: f64, limit: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("argument {re}{im:+}i is within the pole guard of S or T")]
    PoleProximity { re: f64, im: f64 },

    #[error("decomposition signature drifts across sphere nodes {nodes:?}")]
    SignatureDrift { nodes: Vec<usize> },

    #[error("sampling too coarse: {0}")]
    SamplingTooCoarse(String),

    #[error("too few samples: need {needed}, have {have}")]
    TooFewSamples { needed: usize, have: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Context { context: String, source: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures caused by the numerics rather than the input.
    pub fn is_numerical_abort(&self) -> bool {
        if let Error::Context { source, .. } = self {
            return source.is_numerical_abort();
        }
        matches!(
            self,
            Error::SignatureDrift { .. }
                | Error::PoleProximity { .. }
                | Error::OddCluster { .. }
                | Error::SymplecticNormalization { .. }
        )
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }
}
