//! The EKF estimator: per-sample propagation and the per-scan sequence of
//! cloning, data association, stacked updates, and landmark maintenance.
//!
//! Per radar scan the order is: clone the current pose (evicting the oldest
//! clone beyond capacity), run the shared front-end (trail matching, landmark
//! matching, trail maintenance), apply the configured update classes, then
//! maintain landmarks (remove unmatched ones, initialize newly promoted
//! ones). Clones happen before the updates, so the fresh clone tracks the
//! updated pose through its correlation with the nav block.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::Pose;
use crate::matching::frontend::{FrontEnd, FrontEndConfig, ScanAssociation, ScanDecisions};
use crate::models::world_to_radar;
use crate::types::{ImuSample, RadarScan};

use super::jacobians;
use super::propagate::{propagate, ProcessNoise};
use super::state::{
    FilterState, NavState, IDX_BG, IDX_CALIB_P, IDX_P, IDX_TH, IDX_V, LM_DIM, STATIC_DIM,
};
use super::update::{ransac_velocity, RansacConfig, StackedUpdate};
use super::{EkfError, UpdateClass, UpdateReport};

/// Initial nominal state and the standard deviations seeding the covariance.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialNav {
    pub t: f64,
    pub p: Vector3<f64>,
    /// Initial attitude as a rotation vector (world ← body).
    pub theta: Vector3<f64>,
    pub v: Vector3<f64>,
    pub ba: Vector3<f64>,
    pub bg: Vector3<f64>,
    pub sigma_p: f64,
    pub sigma_theta: f64,
    pub sigma_v: f64,
    pub sigma_ba: f64,
    pub sigma_bg: f64,
    pub sigma_calib_p: f64,
    pub sigma_calib_theta: f64,
}

impl Default for InitialNav {
    fn default() -> Self {
        InitialNav {
            t: 0.0,
            p: Vector3::zeros(),
            theta: Vector3::zeros(),
            v: Vector3::zeros(),
            ba: Vector3::zeros(),
            bg: Vector3::zeros(),
            sigma_p: 1e-4,
            sigma_theta: 1e-3,
            sigma_v: 1e-2,
            sigma_ba: 2e-2,
            sigma_bg: 2e-3,
            sigma_calib_p: 0.05,
            sigma_calib_theta: 0.05,
        }
    }
}

/// EKF configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EkfConfig {
    pub noise: ProcessNoise,
    /// Distance measurement σ [m] (trail and landmark updates).
    pub sigma_d: f64,
    /// Doppler measurement σ [m/s].
    pub sigma_v: f64,
    /// Isotropic σ [m] of a radar point measurement when initializing a
    /// landmark from it.
    pub sigma_landmark_init: f64,
    /// Per-scalar chi-squared gate percentile.
    pub chi2_percentile: f64,
    /// Clone buffer capacity.
    pub max_clones: usize,
    /// Landmark capacity; beyond it the least-recently-matched landmark is
    /// evicted.
    pub max_landmarks: usize,
    /// Order in which the measurement classes update the state each scan.
    pub update_order: Vec<UpdateClass>,
    pub ransac: RansacConfig,
    /// When false ("manual calibration"), the extrinsics stay pinned at their
    /// initial values by zeroed calibration covariance.
    pub estimate_extrinsics: bool,
    pub frontend: FrontEndConfig,
}

impl Default for EkfConfig {
    fn default() -> Self {
        EkfConfig {
            noise: ProcessNoise::default(),
            sigma_d: 0.05,
            sigma_v: 0.05,
            sigma_landmark_init: 0.05,
            chi2_percentile: 0.95,
            max_clones: 7,
            max_landmarks: 20,
            update_order: vec![
                UpdateClass::DistanceTrails,
                UpdateClass::Doppler,
                UpdateClass::Landmarks,
            ],
            ransac: RansacConfig::default(),
            estimate_extrinsics: true,
            frontend: FrontEndConfig::default(),
        }
    }
}

/// Outcome of one radar scan.
#[derive(Clone, Debug)]
pub struct ScanResult {
    pub decisions: ScanDecisions,
    pub report: UpdateReport,
}

/// Multi-state radar-inertial EKF.
pub struct Ekf {
    pub cfg: EkfConfig,
    state: FilterState,
    frontend: FrontEnd,
    last_imu: Option<ImuSample>,
}

impl Ekf {
    pub fn new(cfg: EkfConfig, init: InitialNav, extrinsics: Pose) -> Self {
        let nav = NavState {
            p: init.p,
            q: crate::geom::Rotation::exp(&init.theta),
            v: init.v,
            ba: init.ba,
            bg: init.bg,
        };
        let mut state = FilterState::new(init.t, nav, extrinsics);
        let mut diag = DVector::zeros(STATIC_DIM);
        for k in 0..3 {
            diag[IDX_P + k] = init.sigma_p * init.sigma_p;
            diag[IDX_TH + k] = init.sigma_theta * init.sigma_theta;
            diag[IDX_V + k] = init.sigma_v * init.sigma_v;
            diag[super::state::IDX_BA + k] = init.sigma_ba * init.sigma_ba;
            diag[IDX_BG + k] = init.sigma_bg * init.sigma_bg;
            if cfg.estimate_extrinsics {
                diag[IDX_CALIB_P + k] = init.sigma_calib_p * init.sigma_calib_p;
                diag[super::state::IDX_CALIB_TH + k] =
                    init.sigma_calib_theta * init.sigma_calib_theta;
            }
        }
        state.cov = DMatrix::from_diagonal(&diag);
        let frontend = FrontEnd::new(cfg.frontend);
        Ekf {
            cfg,
            state,
            frontend,
            last_imu: None,
        }
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    pub fn frontend(&self) -> &FrontEnd {
        &self.frontend
    }

    /// Feeds one IMU sample; each consecutive pair is averaged and propagated
    /// over the interval between them.
    pub fn process_imu(&mut self, sample: ImuSample) -> Result<(), EkfError> {
        if !(sample.accel.iter().all(|x| x.is_finite())
            && sample.gyro.iter().all(|x| x.is_finite())
            && sample.t.is_finite())
        {
            return Err(EkfError::NonFiniteImu);
        }
        if let Some(prev) = self.last_imu {
            let dt = sample.t - prev.t;
            let accel = (prev.accel + sample.accel) * 0.5;
            let gyro = (prev.gyro + sample.gyro) * 0.5;
            propagate(&mut self.state, &accel, &gyro, dt, &self.cfg.noise)?;
        } else {
            self.state.t = sample.t;
        }
        self.last_imu = Some(sample);
        Ok(())
    }

    /// Processes one radar scan. `gyro` is the raw rate of the nearest
    /// preceding IMU sample (bias-corrected internally for the Doppler
    /// lever-arm term).
    pub fn process_scan(
        &mut self,
        scan: &RadarScan,
        scan_index: u64,
        gyro: &Vector3<f64>,
    ) -> Result<ScanResult, EkfError> {
        if (self.state.t - scan.t).abs() > 1e-6 {
            return Err(EkfError::TimeMismatch {
                state_t: self.state.t,
                scan_t: scan.t,
            });
        }

        // Clone the current pose; evict beyond capacity.
        self.state.add_clone(scan_index, scan.t);
        if self.state.clones.len() > self.cfg.max_clones {
            if let Some(evicted) = self.state.remove_oldest_clone() {
                self.frontend.evict_scan(evicted);
            }
        }

        // Shared front-end: association + trail maintenance.
        let association = {
            let state = &self.state;
            let predictions: Vec<(u64, Vector3<f64>)> = state
                .landmarks
                .iter()
                .map(|l| {
                    (
                        l.id,
                        world_to_radar(&state.nav.pose(), &state.calib, &l.p),
                    )
                })
                .collect();
            let clones = &state.clones;
            let pose_for_scan = |si: u64| -> Option<Pose> {
                clones
                    .iter()
                    .find(|c| c.scan_index == si)
                    .map(|c| c.pose)
            };
            self.frontend.process_scan(
                scan,
                scan_index,
                &predictions,
                &pose_for_scan,
                &state.nav.pose(),
                &state.calib,
            )?
        };

        // Updates, one stacked update per class in the configured order.
        let mut report = UpdateReport {
            scan_index,
            ..UpdateReport::default()
        };
        for class in self.cfg.update_order.clone() {
            match class {
                UpdateClass::DistanceTrails => {
                    self.update_distance_trails(scan, &association, &mut report)?
                }
                UpdateClass::Doppler => self.update_doppler(scan, scan_index, gyro, &mut report),
                UpdateClass::Landmarks => self.update_landmarks(scan, &association, &mut report),
            }
        }

        // Landmark maintenance.
        for &(id, _) in &association.landmark_matches {
            if let Some(idx) = self.state.landmarks.iter().position(|l| l.id == id) {
                self.state.landmarks[idx].last_matched_scan = scan_index;
            }
        }
        for &id in &association.unmatched_landmarks {
            self.state.remove_landmark(id);
        }
        for promo in &association.promotions {
            while self.state.landmarks.len() >= self.cfg.max_landmarks {
                let evict = self
                    .state
                    .landmarks
                    .iter()
                    .enumerate()
                    .min_by_key(|(i, l)| (l.last_matched_scan, *i))
                    .map(|(_, l)| l.id)
                    .expect("non-empty landmark list");
                self.state.remove_landmark(evict);
            }
            let p_radar = scan.points[promo.point_index].position;
            self.init_landmark(promo.trail_id, scan_index, &p_radar);
        }

        self.state.symmetrize();
        Ok(ScanResult {
            decisions: association.decisions,
            report,
        })
    }

    fn update_distance_trails(
        &mut self,
        scan: &RadarScan,
        association: &ScanAssociation,
        report: &mut UpdateReport,
    ) -> Result<(), EkfError> {
        let dim = self.state.dim();
        let mut stacked = StackedUpdate::new(dim);
        for m in &association.trail_matches {
            let measured = scan.points[m.point_index].range();
            for obs in &m.history {
                let (ordinal, clone) = self
                    .state
                    .clone_by_scan(obs.scan_index)
                    .ok_or(EkfError::StaleCloneReference(obs.scan_index))?;
                let jac = jacobians::distance_trail(
                    &self.state.nav.pose(),
                    &clone.pose,
                    &self.state.calib,
                    &obs.point,
                );
                let mut row = DVector::zeros(dim);
                row.fixed_rows_mut::<3>(IDX_P)
                    .copy_from(&jac.d_nav_p.transpose());
                row.fixed_rows_mut::<3>(IDX_TH)
                    .copy_from(&jac.d_nav_th.transpose());
                let at = self.state.clone_offset(ordinal);
                row.fixed_rows_mut::<3>(at).copy_from(&jac.d_clone_p.transpose());
                row.fixed_rows_mut::<3>(at + 3)
                    .copy_from(&jac.d_clone_th.transpose());
                row.fixed_rows_mut::<3>(IDX_CALIB_P)
                    .copy_from(&jac.d_calib_p.transpose());
                row.fixed_rows_mut::<3>(super::state::IDX_CALIB_TH)
                    .copy_from(&jac.d_calib_th.transpose());
                stacked.offer(
                    &self.state,
                    row,
                    measured - jac.predicted,
                    self.cfg.sigma_d,
                    self.cfg.chi2_percentile,
                    &mut report.distance,
                );
            }
        }
        stacked.apply(&mut self.state);
        Ok(())
    }

    fn update_doppler(
        &mut self,
        scan: &RadarScan,
        scan_index: u64,
        gyro: &Vector3<f64>,
        report: &mut UpdateReport,
    ) {
        let dirs: Vec<Vector3<f64>> = scan.points.iter().map(|p| p.position).collect();
        let dopplers: Vec<f64> = scan.points.iter().map(|p| p.doppler).collect();
        report.ransac.offered = dirs.len();
        let Some(fit) = ransac_velocity(&dirs, &dopplers, &self.cfg.ransac, scan_index) else {
            report.ransac.skipped = true;
            return;
        };
        report.ransac.inliers = fit.inliers.len();

        let dim = self.state.dim();
        let mut stacked = StackedUpdate::new(dim);
        for &i in &fit.inliers {
            let jac = jacobians::doppler(
                &self.state.nav.pose(),
                &self.state.nav.v,
                gyro,
                &self.state.nav.bg,
                &self.state.calib,
                &dirs[i],
            );
            let mut row = DVector::zeros(dim);
            row.fixed_rows_mut::<3>(IDX_V).copy_from(&jac.d_v.transpose());
            row.fixed_rows_mut::<3>(IDX_TH)
                .copy_from(&jac.d_th.transpose());
            row.fixed_rows_mut::<3>(IDX_BG)
                .copy_from(&jac.d_bg.transpose());
            row.fixed_rows_mut::<3>(IDX_CALIB_P)
                .copy_from(&jac.d_calib_p.transpose());
            row.fixed_rows_mut::<3>(super::state::IDX_CALIB_TH)
                .copy_from(&jac.d_calib_th.transpose());
            stacked.offer(
                &self.state,
                row,
                dopplers[i] - jac.predicted,
                self.cfg.sigma_v,
                self.cfg.chi2_percentile,
                &mut report.doppler,
            );
        }
        stacked.apply(&mut self.state);
    }

    fn update_landmarks(
        &mut self,
        scan: &RadarScan,
        association: &ScanAssociation,
        report: &mut UpdateReport,
    ) {
        let dim = self.state.dim();
        let mut stacked = StackedUpdate::new(dim);
        for &(id, point_index) in &association.landmark_matches {
            let Some((m, lm)) = self.state.landmark_by_id(id) else {
                continue;
            };
            let jac =
                jacobians::landmark_distance(&self.state.nav.pose(), &self.state.calib, &lm.p);
            let mut row = DVector::zeros(dim);
            row.fixed_rows_mut::<3>(IDX_P)
                .copy_from(&jac.d_nav_p.transpose());
            row.fixed_rows_mut::<3>(IDX_TH)
                .copy_from(&jac.d_nav_th.transpose());
            row.fixed_rows_mut::<3>(IDX_CALIB_P)
                .copy_from(&jac.d_calib_p.transpose());
            row.fixed_rows_mut::<3>(super::state::IDX_CALIB_TH)
                .copy_from(&jac.d_calib_th.transpose());
            let at = self.state.landmark_offset(m);
            row.fixed_rows_mut::<3>(at).copy_from(&jac.d_lm.transpose());
            let measured = scan.points[point_index].range();
            stacked.offer(
                &self.state,
                row,
                measured - jac.predicted,
                self.cfg.sigma_d,
                self.cfg.chi2_percentile,
                &mut report.landmarks,
            );
        }
        stacked.apply(&mut self.state);
    }

    /// Initializes a landmark from a radar-frame measurement at the current
    /// state, augmenting the covariance with the induced marginal and cross
    /// blocks.
    fn init_landmark(&mut self, id: u64, scan_index: u64, p_radar: &Vector3<f64>) {
        let init = jacobians::landmark_init(&self.state.nav.pose(), &self.state.calib, p_radar);
        let dim = self.state.dim();
        let mut h_x = DMatrix::zeros(LM_DIM, dim);
        h_x.fixed_view_mut::<3, 3>(0, IDX_P).copy_from(&init.h_nav_p);
        h_x.fixed_view_mut::<3, 3>(0, IDX_TH)
            .copy_from(&init.h_nav_th);
        h_x.fixed_view_mut::<3, 3>(0, IDX_CALIB_P)
            .copy_from(&init.h_calib_p);
        h_x.fixed_view_mut::<3, 3>(0, super::state::IDX_CALIB_TH)
            .copy_from(&init.h_calib_th);
        let sigma2 = self.cfg.sigma_landmark_init * self.cfg.sigma_landmark_init;
        let cross = &h_x * &self.state.cov;
        let marginal = (&cross * h_x.transpose()
            + init.h_z * nalgebra::Matrix3::identity() * sigma2 * init.h_z.transpose())
        .fixed_view::<3, 3>(0, 0)
        .into_owned();
        let marginal = (marginal + marginal.transpose()) * 0.5;
        self.state
            .add_landmark(id, init.mean, scan_index, marginal, &cross);
    }
}
