use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("missing embedding for key `{0}`")]
    MissingEmbedding(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("undefined neighbor measure: node {0} has degree 0")]
    UndefinedMeasure(usize),

    #[error("nodes {0} and {1} are not connected")]
    Unreachable(usize, usize),

    #[error("infeasible transport problem: {0}")]
    Infeasible(String),

    #[error("nodes {0} and {1} are not adjacent")]
    NotAdjacent(usize, usize),

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("complex `{0}` has no pocket residue and cannot be trained on")]
    Untrainable(String),

    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
