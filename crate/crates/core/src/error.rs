use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bath parameters: {0}")]
    InvalidBath(String),

    #[error(
        "critically damped oscillator (omega_B = {omega_b} = zeta/2) gives a double pole; \
         perturb zeta by ~1e-6"
    )]
    DegenerateDamping { zeta: f64, omega_b: f64 },

    #[error("quadrature did not converge at t = {t}: error estimate {error:e} after {intervals} intervals")]
    Quadrature { t: f64, error: f64, intervals: usize },

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("hierarchy with C(L+K, K) = {size} entries exceeds the budget of {budget}")]
    HierarchyTooLarge { size: u128, budget: usize },

    #[error("initial density matrix has trace {trace}, expected 1")]
    TraceNotUnit { trace: f64 },

    #[error("trajectory blow-up at t = {t} (max |element| = {max_abs:e}){}", trajectory_suffix(*.trajectory))]
    Blowup {
        t: f64,
        max_abs: f64,
        trajectory: Option<u64>,
    },

    #[error("weight collapse at t = {t} (theta = {theta:e}){}", trajectory_suffix(*.trajectory))]
    WeightCollapse {
        t: f64,
        theta: f64,
        trajectory: Option<u64>,
    },

    #[error("all {count} trajectories were discarded")]
    AllDiscarded { count: u64 },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn trajectory_suffix(trajectory: Option<u64>) -> String {
    trajectory
        .map(|id| format!(" in trajectory {id}"))
        .unwrap_or_default()
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn with_trajectory(self, id: u64) -> Self {
        match self {
            Error::Blowup { t, max_abs, .. } => Error::Blowup {
                t,
                max_abs,
                trajectory: Some(id),
            },
            Error::WeightCollapse { t, theta, .. } => Error::WeightCollapse {
                t,
                theta,
                trajectory: Some(id),
            },
            other => other,
        }
    }
}
