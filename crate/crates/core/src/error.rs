use thiserror::Error;

/// Errors raised anywhere in the reduced-order modelling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("Newton iteration did not converge at time index {time_index} (residual {residual:.3e} after {iterations} iterations)")]
    NonConvergence {
        time_index: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("requested basis dimension {requested} exceeds numerical rank {rank}")]
    RankDeficient { requested: usize, rank: usize },

    #[error("singular or ill-conditioned linear system: {0}")]
    Singular(String),

    #[error("Cholesky factorization failed even with jitter {jitter:.1e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("training diverged: {0}")]
    TrainingDivergence(String),

    #[error("solver failure for mu={mu}, mu_p={mu_p}, k={k_pod:?}: {source}")]
    SampleFailure {
        mu: f64,
        mu_p: f64,
        k_pod: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("domain decomposition exceeded {iterations} iterations ({intervals} intervals built)")]
    IterationCap { iterations: usize, intervals: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True when the root cause is a Newton failure in a FOM or ROM solve.
    pub fn is_nonconvergence(&self) -> bool {
        match self {
            Error::NonConvergence { .. } => true,
            Error::SampleFailure { source, .. } => source.is_nonconvergence(),
            _ => false,
        }
    }
}
