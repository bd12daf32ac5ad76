use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid weight configuration: {condition}")]
    InvalidWeights { condition: String },

    #[error("singular tridiagonal system (dt = {dt}, h = {h}, max|a1| = {a1_bound})")]
    SingularSystem { dt: f64, h: f64, a1_bound: f64 },

    #[error("resource limit: {0}")]
    ResourceLimit(String),

    #[error("weight regime rejected: lambda*h/(delta*T^2) = {ratio} exceeds {eps0}")]
    RegimeRejected { ratio: f64, eps0: f64 },

    #[error("conjugate gradient did not reach tolerance {tol} in {iterations} iterations (last relative residual {last})")]
    Convergence {
        tol: f64,
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("configuration invalid:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
