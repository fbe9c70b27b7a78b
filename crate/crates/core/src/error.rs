use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structural(String),

    #[error("semantic error: {0}")]
    Semantic(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("degenerate axis for part {part}: norm {norm:e}")]
    DegenerateAxis { part: String, norm: f64 },

    #[error("degenerate structure: part {part} is empty")]
    DegenerateStructure { part: usize },

    #[error("encoding dimension {dim} is not divisible by 6")]
    EncodingDim { dim: usize },

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("sampler diverged at step {step}")]
    Divergence { step: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("urdf: {0}")]
    Urdf(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema { path: path.into(), message: message.into() }
    }
}
