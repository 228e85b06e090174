//! Persistent-mode detection and low-rank damping for value-cache streams.
//!
//! A direction `u` is persistent when its lag-1 autocorrelation
//! `u^T Sigma_delta u / u^T Sigma u` is close to one. The leading directions
//! of that pencil are found either densely ([`dense_generalized_eig`]) or by a
//! matrix-free block iteration over a recent window ([`power_subspace`]);
//! directions whose estimate exceeds `lambda_min` are damped in the stored
//! cache with age-dependent strength.

mod eig;
mod plan;
mod regulator;
mod stats;

pub use eig::{
    default_ridge, dense_generalized_eig, orthonormalize, power_subspace, principal_angle_deg,
    random_orthonormal, rayleigh_eigenvalues, GeneralizedEigen, PowerOptions, PowerResult,
    RayleighValue, CONVERGENCE_DEG, DEFAULT_ITERATIONS, EPS_STAB, MAX_DIRECTIONS,
};
pub use plan::{
    damp_values, read_plans, select_directions, write_plan, DampingMode, RegulationPlan,
    ORTHONORMAL_TOL,
};
pub use regulator::{
    regulate_heads, regulate_stream, write_spectral_log, HeadStream, Regulator, RegulatorConfig,
    SpectralRecord, StreamOutput, Target,
};
pub use stats::{sym, SpectralState, ValueWindow, DEFAULT_DECAY, DEFAULT_WINDOW};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RmrError {
    #[error("row has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("covariance is singular beyond ridge repair")]
    Conditioning,
    #[error("window has {rows} rows, need at least {needed}")]
    WindowTooShort { rows: usize, needed: usize },
    #[error("basis is not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("plan record: {0}")]
    Plan(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
