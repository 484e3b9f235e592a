use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("axis {axis} out of range for a {dim}-dimensional grid")]
    AxisOutOfRange { axis: usize, dim: usize },

    #[error("size cap exceeded: {0}")]
    SizeCap(String),

    #[error("matrix is singular to tolerance (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("inverse failed validation: residual {residual:.3e} (condition estimate {condition:.3e})")]
    InverseCheck { residual: f64, condition: f64 },

    #[error("Neumann condition violated: remainder norm {norm:.4} >= 1")]
    NeumannViolated { norm: f64 },

    #[error("boundary leak at t = {t}: edge magnitude {edge:.3e} exceeds {threshold:.1e} of the maximum")]
    BoundaryLeak { t: f64, edge: f64, threshold: f64 },

    #[error("linear solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("non-finite value produced by `{0}`")]
    NonFinite(&'static str),

    #[error("empty table")]
    EmptyTable,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
