use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: {0}")]
    Range(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    /// A table cell sits on the boundary of the simplex, so an effect is infinite.
    #[error("saturated table: {0}")]
    Saturation(String),
    /// Joint-participation logit outside the Fréchet bounds implied by the margins.
    #[error("infeasible joint probability: {0}")]
    Infeasible(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("did not converge: {0}")]
    NonConvergence(String),
    #[error("undefined quantity: {0}")]
    Undefined(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
