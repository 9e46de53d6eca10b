use thiserror::Error;

/// Errors produced by synthesis, lifting and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("integration blew up at t = {time}")]
    IntegrationBlowup { time: f64 },

    #[error("probing column {column} diverged at t = {time}; the plant is probably not exponentially stable")]
    IdentificationBlowup { column: usize, time: f64 },

    #[error("closed loop diverged during period {period}")]
    ClosedLoopBlowup { period: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I - monodromy is singular to working precision (condition number {condition:e}); check is_exponentially_stable")]
    NotStable { condition: f64 },

    #[error("signal violates real symmetry: relative imaginary residue {residue:e}")]
    CorruptedSignal { residue: f64 },

    #[error("nothing to track: reference and all disturbance profiles are zero")]
    NothingToTrack,

    #[error("regulation equation {index} is not solvable: residual {residual:e} exceeds {tolerance:e}")]
    UnsolvableRegulation {
        index: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("steady-state operator is not surjective at truncation level (sigma_min/sigma_max = {ratio:e}); the robust design requires a surjective P")]
    SurjectivityFailure { ratio: f64 },

    #[error("Y_N is not contained in ran(P) at truncation level (sigma_min/sigma_max = {ratio:e})")]
    OutputSubspaceNotInRange { ratio: f64 },

    #[error("asymptotic error estimate unavailable: {0}")]
    EstimateUnavailable(String),

    #[error("no stable gain in the tuning grid")]
    AllUnstable { table: Vec<crate::closed_loop::TuningRow> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
