use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at {at}: expected {expected}, got {actual}")]
    Shape {
        at: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid architecture: {0}")]
    Architecture(String),

    #[error("non-finite gradient in tensor {tensor} (max |g| = {max_abs})")]
    NonFiniteGradient { tensor: usize, max_abs: f64 },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("latent fit diverged: loss {loss} exceeds {limit}")]
    Diverged { loss: f64, limit: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mesh is not watertight: {} offending edge(s), first {:?}", .edges.len(), .edges.first())]
    NotWatertight { edges: Vec<(usize, usize)> },

    #[error("degenerate shape: {0}")]
    Degenerate(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("bad sample bank file: {0}")]
    BankFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(at: impl Into<String>, expected: usize, actual: usize) -> Error {
    Error::Shape {
        at: at.into(),
        expected,
        actual,
    }
}
