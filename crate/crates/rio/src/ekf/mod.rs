//! Multi-state error-state EKF back-end.
//!
//! The filter estimates the IMU nominal state (position, attitude, velocity,
//! accelerometer/gyroscope biases), the radar extrinsic calibration, a FIFO
//! buffer of cloned past poses, and a set of persistent world landmarks, with
//! one joint covariance over the error state ordered
//! `[nav(15) | calib(6) | clones(6 each) | landmarks(3 each)]`.
//!
//! Attitude errors are right-multiplicative local rotation vectors; position,
//! velocity, and bias errors are additive. Per radar scan the update classes
//! (trail distances, Doppler, landmark distances) each stack their gated
//! scalar residuals into one EKF update; the class order is configurable.

pub mod estimator;
pub mod jacobians;
pub mod propagate;
pub mod state;
pub mod update;

pub use estimator::{Ekf, EkfConfig, InitialNav, ScanResult};
pub use propagate::ProcessNoise;
pub use state::{FilterState, NavState};
pub use update::{chi2_gate, chi2_threshold, GateOutcome, RansacConfig};

use serde::{Deserialize, Serialize};

use crate::matching::MatchError;

#[derive(Debug, thiserror::Error)]
pub enum EkfError {
    #[error("non-finite IMU sample")]
    NonFiniteImu,
    #[error("non-positive propagation interval dt = {0}")]
    NonPositiveDt(f64),
    #[error("filter time {state_t} does not match scan time {scan_t}")]
    TimeMismatch { state_t: f64, scan_t: f64 },
    #[error("trail history references scan {0} with no live clone")]
    StaleCloneReference(u64),
    #[error(transparent)]
    Match(#[from] MatchError),
}

/// The measurement classes updated per radar scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateClass {
    DistanceTrails,
    Doppler,
    Landmarks,
}

/// Diagnostics of one stacked update: every offered scalar residual with its
/// innovation variance and chi-squared value, and how many were accepted.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ClassReport {
    pub residuals: Vec<f64>,
    pub innovation_var: Vec<f64>,
    pub chi2: Vec<f64>,
    pub accepted: usize,
    pub rejected: usize,
}

impl ClassReport {
    pub fn offered(&self) -> usize {
        self.accepted + self.rejected
    }
}

/// Doppler RANSAC diagnostics for one scan.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RansacReport {
    pub offered: usize,
    pub inliers: usize,
    /// True when the scan had fewer than three usable points and the Doppler
    /// update was skipped.
    pub skipped: bool,
}

/// Per-scan update diagnostics across all measurement classes.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct UpdateReport {
    pub scan_index: u64,
    pub distance: ClassReport,
    pub doppler: ClassReport,
    pub landmarks: ClassReport,
    pub ransac: RansacReport,
}
