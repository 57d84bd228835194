use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The normal matrix of a least-squares fit is (numerically) singular.
    #[error("singular fit: condition number {condition:.3e} exceeds {limit:.1e}")]
    SingularFit { condition: f64, limit: f64 },

    /// A moving least-squares local fit has too little support.
    #[error("underdetermined local fit at parameter {param}: {support} supporting nodes, {required} required")]
    UnderdeterminedLocalFit {
        param: String,
        support: usize,
        required: usize,
    },

    #[error("settle failed after {iterations} iterations (last max displacement {max_displacement:.3e} m)")]
    SettleFailure {
        iterations: usize,
        max_displacement: f64,
    },

    /// Dimensions of cooperating objects do not agree.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("estimator failure: {0}")]
    Estimator(String),

    #[error("infeasible start: grasp position {position:?} lies outside the workspace")]
    InfeasibleStart { position: [f64; 3] },

    #[error("QP solver failed after {iterations} iterations (primal residual {primal:.3e}, dual residual {dual:.3e})")]
    SolverFailure {
        iterations: usize,
        primal: f64,
        dual: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
