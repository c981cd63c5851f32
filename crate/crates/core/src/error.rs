use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("variable x{index} is out of range for dimension {dim}")]
    VariableOutOfRange { index: usize, dim: usize },

    #[error("expression is not in the span of the library: {0}")]
    NotInSpan(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("library with exponential terms cannot be used for constraint construction")]
    ExponentialLibrary,

    #[error("flow diverged: {0}")]
    Divergence(String),

    #[error("all {0} batch points had degenerate denominators")]
    DegenerateBatch(usize),

    #[error("integration produced a non-finite state at step {step}")]
    IntegrationFailure { step: usize },

    #[error("initial-condition sampler gave up after {0} draws")]
    SamplerExhausted(usize),

    #[error("Cholesky factorization failed even with jitter {0:e}")]
    Cholesky(f64),

    #[error("invalid configuration at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("discovery failed: {0}")]
    Discovery(String),

    #[error("report audit failed: {0}")]
    Audit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
