//! Sliding-window factor-graph back-end.
//!
//! The window holds the IMU states of the most recent radar scans plus the
//! persistent landmarks observed from them. Between scans the raw IMU stream
//! is preintegrated into relative-motion factors; each scan contributes
//! Doppler factors (one per RANSAC-inlier detection), distance factors (one
//! per trail-history element), and landmark range factors. The window is
//! bounded by marginalizing the oldest state with the Schur complement,
//! carrying its information forward as a quadratic prior anchored at frozen
//! linearization points.
//!
//! The graph machinery (variables, factors, solver, marginalization) is
//! generic so that linear-Gaussian reference problems can run through the
//! identical pipeline and be checked against closed-form baselines.

pub mod estimator;
pub mod factor;
pub mod marginalize;
pub mod preintegrate;
pub mod radar_factors;
pub mod solver;
pub mod variables;

pub use estimator::{FactorCounts, FgConfig, FgEstimator, FgReport, FgScanResult};
pub use factor::{dcs_cost, dcs_weight, Factor, FactorLin, LinearFactor, MarginalPrior};
pub use marginalize::{marginalize, FrozenRegistry, Marginalized};
pub use preintegrate::{preintegrate, PreintFactor, Preintegration};
pub use radar_factors::{DistanceFgFactor, DopplerFgFactor, LandmarkFgFactor};
pub use solver::{solve_lm, Graph, LinearSystem, LmConfig, SolveReport, Termination};
pub use variables::{Values, VarKey, VarValue};

use crate::matching::MatchError;

/// Errors of the factor-graph back-end.
#[derive(Debug, thiserror::Error)]
pub enum FgError {
    #[error("non-finite IMU sample")]
    NonFiniteImu,
    #[error("IMU segment is empty or too short to integrate")]
    EmptySegment,
    #[error("non-positive IMU interval dt = {0}")]
    NonPositiveDt(f64),
    #[error("state time {state_t} does not match scan time {scan_t}")]
    TimeMismatch { state_t: f64, scan_t: f64 },
    #[error("scan index {0} is not newer than the window")]
    NonMonotonicScan(u64),
    #[error("factor references scan {0} outside the window")]
    StaleState(u64),
    #[error("factor references unknown variable {0:?}")]
    UnknownVariable(variables::VarKey),
    #[error("landmark {0} lies at the radar origin; range Jacobian is singular")]
    DegenerateLandmark(u64),
    #[error("linear system could not be factorized")]
    SingularSystem,
    #[error("preintegration covariance is not positive definite")]
    BadPreintCovariance,
    #[error(transparent)]
    Match(#[from] MatchError),
}
