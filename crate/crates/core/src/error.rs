use thiserror::Error;

/// Errors raised by the dynamics, design and simulation routines.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid robot parameters: {0}")]
    InvalidParams(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("inertia matrix is numerically singular (condition number {cond:e})")]
    SingularInertia { cond: f64 },

    #[error("state is not an equilibrium (residual {residual:e})")]
    NotEquilibrium { residual: f64 },

    #[error("matrix is not Hurwitz (max real part {max_real:e})")]
    NotHurwitz { max_real: f64 },

    #[error("pair (A, B) is not controllable (rank {rank} < {n})")]
    Uncontrollable { rank: usize, n: usize },

    #[error("pair (A, C) is not observable (rank {rank} < {n})")]
    Unobservable { rank: usize, n: usize },

    #[error("pair (A, B) is not stabilizable")]
    NotStabilizable,

    #[error("pair (A, Q) is not detectable")]
    NotDetectable,

    #[error("pole placement failed: {0}")]
    PlacementFailed(String),

    #[error("Riccati solve failed: {0}")]
    RiccatiFailed(String),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("integration failed at t = {t}: step size {h:e} below minimum")]
    StepSizeCollapse { t: f64, h: f64 },

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("controller failed at t = {t}: {source}")]
    Controller {
        t: f64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
