use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("CFL condition violated: |v|max*dt/dx = {courant:.4} > 1")]
    Cfl { courant: f64 },

    #[error("exponent constraint violated: {0}")]
    ExponentConstraint(String),

    #[error("test function support touches the boundary: {0}")]
    Support(String),

    #[error("ellipticity violated in {cells} cells (min slack {min_slack:.3e})")]
    Ellipticity { cells: usize, min_slack: f64 },

    #[error("ordering violated: {what} exceeds tolerance by {excess:.3e} at node {node}")]
    Ordering { what: String, excess: f64, node: usize },

    #[error("estimate failure: {0}")]
    Estimate(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
