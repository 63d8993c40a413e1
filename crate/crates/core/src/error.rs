use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("sequence length {n} exceeds the projection length n_max = {n_max}")]
    SequenceLength { n: usize, n_max: usize },

    #[error("unsupported variant: {0}")]
    UnsupportedVariant(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("backward: {0}")]
    Backward(String),

    #[error("malformed {kind} data: {detail}")]
    Format { kind: &'static str, detail: String },

    #[error("analytic/instrumented MAC mismatch: {0}")]
    Validation(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
