use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("reduced Laplacian is singular")]
    SingularLaplacian,

    #[error("message {slot} sums to zero (contradictory evidence)")]
    ZeroMessage { slot: usize },

    #[error("generalized update guard violated: {0}")]
    CountingGuard(String),

    #[error("impossible evidence: every mixture component has zero weight")]
    ImpossibleEvidence,

    #[error("iteration diverged after {iterations} steps (residual {residual:e})")]
    Diverged { iterations: usize, residual: f64 },

    #[error("no root in bracket [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },

    #[error("unknown sorting criterion `{0}`")]
    UnknownCriterion(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("toml: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("toml: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
