use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no positive root of the cumulant: {0}")]
    NoRoot(String),

    #[error("rho = {0} is not positive")]
    NonPositiveRho(f64),

    #[error("model is not critical (E A^alpha = {e_a_alpha}); use the subcritical check instead")]
    NotCritical { e_a_alpha: f64 },

    #[error("strongly non-lattice gate: {0}")]
    Gate(String),

    #[error("quadrature did not reach tolerance within {evals} evaluations")]
    QuadratureBudget { evals: usize },

    #[error("empty window: {0}")]
    EmptyWindow(String),

    #[error("truncation bias {bound:e} at u = {u} exceeds 5% of p_hat = {p_hat:e}; lower tau_stop")]
    BiasZone { u: f64, bound: f64, p_hat: f64 },

    #[error("lattice range too small: {0}")]
    RangeTooSmall(String),

    #[error("{0}")]
    Schema(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
