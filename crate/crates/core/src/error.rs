use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("expression error: {0}")]
    Expression(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("numeric error: {message} (achieved residual {residual:e})")]
    Numeric { message: String, residual: f64 },

    #[error("smoothness error: {0}")]
    Smoothness(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("grid refinement required: {0}")]
    Refinement(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
