use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy at state {state}: {reason}")]
    InvalidPolicy { state: usize, reason: String },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("vector is not in the probability simplex: {0}")]
    NotSimplex(String),

    #[error("cannot project an empty vector")]
    EmptyVector,

    #[error("negative-entropy step needs a strictly positive row, action {action} has zero mass")]
    ZeroSupport { action: usize },

    #[error("reference point is not supported where the Bregman divergence is finite")]
    IncompatibleSupport,

    #[error("divergence is infinite (support mismatch) at state {state}")]
    InfiniteDivergence { state: usize },

    #[error("linear system is singular: {0}")]
    SingularSystem(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed TOML: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn dims(what: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            found,
        }
    }
}
