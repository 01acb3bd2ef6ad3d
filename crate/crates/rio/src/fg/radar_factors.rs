//! Radar measurement factors: Doppler, trail distance, and landmark range.
//!
//! All three wrap the shared measurement models and analytic Jacobians also
//! used by the filter backend, so predictions are bitwise identical across
//! backends. Robustness comes from dynamic covariance scaling: the scale
//! `s = min(1, 2Φ/(Φ + χ²))` is computed on the squared *whitened* residual
//! `χ² = (r/σ)²` — the same normalized error the filter's chi-squared gate
//! tests, so Φ is dimensionless and the two back-ends reject outliers on the
//! same statistic (the graph smoothly, the filter by a hard cut). The
//! Gauss-Newton system sees `(s·r/σ, s·J/σ)`. The reported cost is the
//! matching robust kernel, whose derivative is exactly `s²·χ` — the
//! reweighted gradient is the true gradient, so step acceptance on the
//! robust cost is consistent.
//!
//! Only outlier-prone radar observations are scaled; IMU between-factors and
//! priors stay quadratic.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::ekf::jacobians::{distance_trail, doppler, landmark_distance, predict_trail_distance};
use crate::geom::Pose;
use crate::models::{predict_doppler, world_to_radar};

use super::factor::{dcs_cost, dcs_weight, Factor, FactorLin};
use super::variables::{Values, VarKey, VarValue};
use super::FgError;

/// Navigation error-state block layout within one state variable.
const COL_P: usize = 0;
const COL_TH: usize = 3;
const COL_V: usize = 6;
const COL_BG: usize = 12;
const NAV_DIM: usize = 15;

fn nav_of<'a>(values: &'a Values, key: &VarKey) -> Result<&'a crate::ekf::NavState, FgError> {
    match values.get(key) {
        Some(VarValue::Nav(nav)) => Ok(nav),
        Some(_) => panic!("radar factor bound to a non-state variable"),
        None => Err(FgError::UnknownVariable(*key)),
    }
}

fn point_of<'a>(values: &'a Values, key: &VarKey) -> Result<&'a Vector3<f64>, FgError> {
    match values.get(key) {
        Some(VarValue::Point(p)) => Ok(p),
        Some(_) => panic!("landmark factor bound to a non-point variable"),
        None => Err(FgError::UnknownVariable(*key)),
    }
}

/// Ego-velocity constraint from one Doppler return on the newest state.
#[derive(Clone, Debug)]
pub struct DopplerFgFactor {
    keys: [VarKey; 1],
    /// Radar-frame detection position; only its direction matters.
    pub dir: Vector3<f64>,
    /// Measured range rate [m/s].
    pub measured: f64,
    /// Raw gyro rate at scan time (bias subtracted from the state).
    pub gyro: Vector3<f64>,
    pub extrinsics: Pose,
    pub sigma: f64,
    pub phi: f64,
}

impl DopplerFgFactor {
    pub fn new(
        state: u64,
        dir: Vector3<f64>,
        measured: f64,
        gyro: Vector3<f64>,
        extrinsics: Pose,
        sigma: f64,
        phi: f64,
    ) -> DopplerFgFactor {
        DopplerFgFactor {
            keys: [VarKey::State(state)],
            dir,
            measured,
            gyro,
            extrinsics,
            sigma,
            phi,
        }
    }
}

impl Factor for DopplerFgFactor {
    fn keys(&self) -> &[VarKey] {
        &self.keys
    }

    fn linearize(&self, values: &Values) -> Result<FactorLin, FgError> {
        let nav = nav_of(values, &self.keys[0])?;
        let jac = doppler(
            &nav.pose(),
            &nav.v,
            &self.gyro,
            &nav.bg,
            &self.extrinsics,
            &self.dir,
        );
        let r = (self.measured - jac.predicted) / self.sigma;
        let s = dcs_weight(r * r, self.phi);
        let mut block = DMatrix::zeros(1, NAV_DIM);
        let scale = -s / self.sigma;
        for k in 0..3 {
            block[(0, COL_TH + k)] = scale * jac.d_th[k];
            block[(0, COL_V + k)] = scale * jac.d_v[k];
            block[(0, COL_BG + k)] = scale * jac.d_bg[k];
        }
        Ok(FactorLin {
            residual: DVector::from_element(1, s * r),
            blocks: vec![block],
        })
    }

    fn cost(&self, values: &Values) -> Result<f64, FgError> {
        let nav = nav_of(values, &self.keys[0])?;
        let omega = self.gyro - nav.bg;
        let predicted = predict_doppler(&nav.pose(), &nav.v, &omega, &self.extrinsics, &self.dir);
        let r = (self.measured - predicted) / self.sigma;
        Ok(0.5 * dcs_cost(r * r, self.phi))
    }
}

/// Range of a trail point re-observed from the current radar origin; binds
/// the current state to the state that first saw the point.
#[derive(Clone, Debug)]
pub struct DistanceFgFactor {
    keys: [VarKey; 2],
    /// Trail identifier (diagnostics only).
    pub id: u64,
    /// Detection in the radar frame of the past state.
    pub p_old: Vector3<f64>,
    /// Range measured at the current scan [m].
    pub measured: f64,
    pub extrinsics: Pose,
    pub sigma: f64,
    pub phi: f64,
}

impl DistanceFgFactor {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        current: u64,
        past: u64,
        id: u64,
        p_old: Vector3<f64>,
        measured: f64,
        extrinsics: Pose,
        sigma: f64,
        phi: f64,
    ) -> DistanceFgFactor {
        assert_ne!(current, past, "trail factor must span two states");
        DistanceFgFactor {
            keys: [VarKey::State(current), VarKey::State(past)],
            id,
            p_old,
            measured,
            extrinsics,
            sigma,
            phi,
        }
    }
}

impl Factor for DistanceFgFactor {
    fn keys(&self) -> &[VarKey] {
        &self.keys
    }

    fn linearize(&self, values: &Values) -> Result<FactorLin, FgError> {
        let nav = nav_of(values, &self.keys[0])?;
        let past = nav_of(values, &self.keys[1])?;
        let jac = distance_trail(&nav.pose(), &past.pose(), &self.extrinsics, &self.p_old);
        if !(jac.predicted > 1e-9) {
            return Err(FgError::DegenerateLandmark(self.id));
        }
        let r = (self.measured - jac.predicted) / self.sigma;
        let s = dcs_weight(r * r, self.phi);
        let scale = -s / self.sigma;
        let mut cur = DMatrix::zeros(1, NAV_DIM);
        let mut old = DMatrix::zeros(1, NAV_DIM);
        for k in 0..3 {
            cur[(0, COL_P + k)] = scale * jac.d_nav_p[k];
            cur[(0, COL_TH + k)] = scale * jac.d_nav_th[k];
            old[(0, COL_P + k)] = scale * jac.d_clone_p[k];
            old[(0, COL_TH + k)] = scale * jac.d_clone_th[k];
        }
        Ok(FactorLin {
            residual: DVector::from_element(1, s * r),
            blocks: vec![cur, old],
        })
    }

    fn cost(&self, values: &Values) -> Result<f64, FgError> {
        let nav = nav_of(values, &self.keys[0])?;
        let past = nav_of(values, &self.keys[1])?;
        let predicted =
            predict_trail_distance(&nav.pose(), &past.pose(), &self.extrinsics, &self.p_old);
        let r = (self.measured - predicted) / self.sigma;
        Ok(0.5 * dcs_cost(r * r, self.phi))
    }
}

/// Range of a persistent world landmark from the observing state's radar.
#[derive(Clone, Debug)]
pub struct LandmarkFgFactor {
    keys: [VarKey; 2],
    /// Landmark identifier (also the landmark variable key).
    pub id: u64,
    /// Range measured at the observing scan [m].
    pub measured: f64,
    pub extrinsics: Pose,
    pub sigma: f64,
    pub phi: f64,
}

impl LandmarkFgFactor {
    pub fn new(
        state: u64,
        id: u64,
        measured: f64,
        extrinsics: Pose,
        sigma: f64,
        phi: f64,
    ) -> LandmarkFgFactor {
        LandmarkFgFactor {
            keys: [VarKey::State(state), VarKey::Landmark(id)],
            id,
            measured,
            extrinsics,
            sigma,
            phi,
        }
    }
}

impl Factor for LandmarkFgFactor {
    fn keys(&self) -> &[VarKey] {
        &self.keys
    }

    fn linearize(&self, values: &Values) -> Result<FactorLin, FgError> {
        let nav = nav_of(values, &self.keys[0])?;
        let lm = point_of(values, &self.keys[1])?;
        let jac = landmark_distance(&nav.pose(), &self.extrinsics, lm);
        if !(jac.predicted > 1e-9) {
            return Err(FgError::DegenerateLandmark(self.id));
        }
        let r = (self.measured - jac.predicted) / self.sigma;
        let s = dcs_weight(r * r, self.phi);
        let scale = -s / self.sigma;
        let mut state = DMatrix::zeros(1, NAV_DIM);
        let mut point = DMatrix::zeros(1, 3);
        for k in 0..3 {
            state[(0, COL_P + k)] = scale * jac.d_nav_p[k];
            state[(0, COL_TH + k)] = scale * jac.d_nav_th[k];
            point[(0, k)] = scale * jac.d_lm[k];
        }
        Ok(FactorLin {
            residual: DVector::from_element(1, s * r),
            blocks: vec![state, point],
        })
    }

    fn cost(&self, values: &Values) -> Result<f64, FgError> {
        let nav = nav_of(values, &self.keys[0])?;
        let lm = point_of(values, &self.keys[1])?;
        let predicted = world_to_radar(&nav.pose(), &self.extrinsics, lm).norm();
        let r = (self.measured - predicted) / self.sigma;
        Ok(0.5 * dcs_cost(r * r, self.phi))
    }
}
