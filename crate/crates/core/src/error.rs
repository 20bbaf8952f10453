use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid road: {0}")]
    InvalidRoad(String),
    #[error("invalid vehicle state: {0}")]
    InvalidState(String),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("QP is not convex: {0}")]
    NotConvex(String),
    #[error("QP is infeasible")]
    Infeasible,
    #[error("QP solver did not converge after {iterations} iterations")]
    NotConverged { iterations: usize, best: Vec<f64> },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
