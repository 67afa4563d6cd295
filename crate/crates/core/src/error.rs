use thiserror::Error;

/// Errors produced anywhere in the factorization pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("index {index} out of range for dimension of size {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("invalid index set: {0}")]
    InvalidIndexSet(String),
    #[error("data length {len} does not match shape {rows}x{cols}")]
    InvalidShape { rows: usize, cols: usize, len: usize },
    #[error("matrix is rank deficient{}: smallest singular value {sigma_min:e} <= {threshold:e}", layer_note(*.layer))]
    RankDeficient {
        layer: Option<usize>,
        sigma_min: f64,
        threshold: f64,
    },
    #[error("active-set NNLS did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("invalid rank {rank} for a {rows}x{cols} matrix")]
    InvalidRank { rank: usize, rows: usize, cols: usize },
    #[error("invalid layer specification: {0}")]
    InvalidLayers(String),
    #[error("known-label fraction {0} is outside [0, 1]")]
    InvalidFraction(f64),
    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("factor stack is inconsistent at layer {layer}: KKT residual {residual:e}")]
    InconsistentStack { layer: usize, residual: f64 },
    #[error("training diverged at iteration {iteration}: loss {loss:e} vs initial {initial:e}")]
    Divergence {
        iteration: usize,
        loss: f64,
        initial: f64,
    },
    #[error("invalid loss specification: {0}")]
    InvalidLoss(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(String),
}

fn layer_note(layer: Option<usize>) -> String {
    match layer {
        Some(l) => format!(" at layer {l}"),
        None => String::new(),
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, expected: impl ToString, got: impl ToString) -> Error {
    Error::ShapeMismatch {
        op,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
