use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("size mismatch: {0}")]
    Size(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("degenerate null: {0}")]
    DegenerateNull(String),
    #[error("grid too small: boundary mass {mass:.3e} exceeds {limit:.1e}")]
    GridTooSmall { mass: f64, limit: f64 },
    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("missing origin mapping: {0}")]
    MissingOrigin(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
