use thiserror::Error;

/// Every failure the library reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("empty sequence")]
    EmptySequence,
    #[error("batch statistics need at least 2 rows, got {0}")]
    BatchStatistics(usize),
    #[error("expected a scalar loss, got dims {0:?}")]
    Rank(Vec<usize>),
    #[error("poisoned update: non-finite gradient for parameter `{0}`")]
    PoisonedUpdate(String),
    #[error("function is not deterministic: two evaluations differ by {0:e}")]
    NonDeterministic(f64),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("degenerate range on axis {axis} (min == max == {value})")]
    DegenerateRange { axis: char, value: f64 },
    #[error("insufficient history: need {needed} frames, got {available}")]
    InsufficientHistory { needed: usize, available: usize },
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model load failed at {record}: {message}")]
    Load { record: String, message: String },
    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("training diverged at epoch {epoch}: loss {loss:e} exceeds {factor}x initial {initial:e}")]
    Divergence {
        epoch: usize,
        loss: f64,
        initial: f64,
        factor: f64,
    },
    #[error("gradient check failed: {0}")]
    GradCheck(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
