use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),

    #[error("algorithm {algorithm} requires parameter `{param}`")]
    MissingParameter {
        algorithm: &'static str,
        param: &'static str,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("algorithm has no fixed point at the optimum: {0}")]
    InvalidAlgorithm(String),

    #[error("gradients at the optimum do not sum to zero (residual {0:e})")]
    InconsistentOptimum(f64),

    #[error("no rate up to {rho_hi} could be certified")]
    Uncertifiable { rho_hi: f64 },

    #[error("feasibility oracle failed: {0}")]
    Solver(String),

    #[error("singular expression: {0}")]
    Singular(String),

    #[error("SVL design infeasible: {0}")]
    DesignInfeasible(String),

    #[error("initial state violates the algorithm invariant (residual {0:e})")]
    BadInitialization(f64),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no feasible point found: {0}")]
    Infeasible(String),

    #[error("no Laplacian reproduces the signals: {0}")]
    NoLaplacian(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
