use thiserror::Error;

/// Errors produced anywhere in the simulator and attack pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("stale or missing activations: {0}")]
    StaleActivations(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("degenerate distribution: {0}")]
    Degenerate(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(context: &'static str, expected: &[usize], actual: &[usize]) -> Error {
    Error::Shape {
        context,
        expected: expected.to_vec(),
        actual: actual.to_vec(),
    }
}
