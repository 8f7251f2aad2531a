use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("node {node} has no lattice neighbor at offset {offset:?}")]
    MissingNeighbor { node: usize, offset: Vec<i64> },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("operator and environment are incompatible: {0}")]
    Incompatible(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },

    #[error("linear solver failure: {0}")]
    LinearSolver(String),

    #[error("bracket check failed: {0}")]
    Bracket(String),

    #[error("effective operator queried outside its tabulated range: {0}")]
    OutOfTableRange(String),

    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn for_seed(seed: u64, err: Error) -> Self {
        Error::Seed {
            seed,
            source: Box::new(err),
        }
    }

    /// The innermost error, looking through per-seed tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Seed { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_nonconvergence(&self) -> bool {
        matches!(
            self.root(),
            Error::NonConvergence { .. } | Error::NonFinite { .. } | Error::LinearSolver(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
