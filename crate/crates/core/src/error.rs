use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("negative {quantity} {value:e} at cell {cell}")]
    Domain {
        quantity: &'static str,
        cell: usize,
        value: f64,
    },

    #[error("non-finite value in {field} at cell {cell}")]
    NonFinite { field: &'static str, cell: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("linear solver did not reach relative residual {tol:e} in {iterations} iterations (last {residual:e})")]
    LinearSolver {
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    #[error("state invariant violated at t = {t}: {detail}")]
    Invariant { t: f64, detail: String },

    #[error("test function support: {0}")]
    Support(String),

    #[error("weight function bound violated at cell {cell}: {detail}")]
    Weight { cell: usize, detail: String },

    #[error("fixed-point iteration stopped contracting after {iterations} iterations; requires dG/dp <= -beta")]
    NonContraction { iterations: usize },

    #[error("fixed-point iteration did not converge in {0} iterations")]
    NoConvergence(usize),

    #[error("focusing trace: {0}")]
    Focusing(String),

    #[error("config: {0}")]
    Config(#[from] crate::config::ConfigErrors),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
