use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("quadrature did not converge: achieved relative tolerance {achieved:.3e}, requested {requested:.3e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("radius {requested} exceeds grid extent; rho_max must be at least {required_rho_max}")]
    OutOfGrid {
        requested: f64,
        required_rho_max: f64,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("rigidity threshold undefined for n = {0} (needs n(n-1)/2 > 2)")]
    RigidityUndefined(usize),

    #[error("minimizer did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("feature below grid resolution: {0}; refine the grid")]
    Unresolved(String),

    #[error("optimizer stagnated at L = {best:.6e} with gradient norm {gradient:.3e}")]
    Stagnation { best: f64, gradient: f64 },

    #[error("time step failure: {0}")]
    Step(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
