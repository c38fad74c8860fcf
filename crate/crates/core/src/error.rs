use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty tensor has no range")]
    EmptyTensor,

    #[error("degenerate range: max equals min ({0})")]
    DegenerateRange(f64),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("accumulator overflow at output index {0}")]
    AccumulatorOverflow(usize),

    #[error("catalog parse error at line {line}, column {column}: {message}")]
    CatalogParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("IDX format error: {0}")]
    Idx(String),

    #[error("report error: {0}")]
    Report(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
