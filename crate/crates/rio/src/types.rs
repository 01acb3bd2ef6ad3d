//! Sensor sample types shared by the simulator, the DSP chain, and the
//! estimators.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// One IMU sample: specific force and angular rate in the body frame.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ImuSample {
    /// Timestamp [s].
    pub t: f64,
    /// Accelerometer specific force [m/s²].
    pub accel: Vector3<f64>,
    /// Gyroscope angular rate [rad/s].
    pub gyro: Vector3<f64>,
}

/// One radar detection in the radar sensor frame.
///
/// The radar frame has x along boresight, y left, z up; `position` is the
/// Cartesian detection location in that frame.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RadarPoint {
    pub position: Vector3<f64>,
    /// Radial (range-rate) velocity [m/s]; positive means receding.
    pub doppler: f64,
    /// Detection power/intensity in arbitrary linear units.
    pub intensity: f64,
    /// Identity of the generating scatterer, when known (simulation only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_id: Option<u64>,
}

impl RadarPoint {
    pub fn range(&self) -> f64 {
        self.position.norm()
    }
}

/// One radar scan: all detections of a single frame.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadarScan {
    /// Timestamp [s].
    pub t: f64,
    pub points: Vec<RadarPoint>,
}
