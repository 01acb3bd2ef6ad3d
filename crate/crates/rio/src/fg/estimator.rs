//! Sliding-window factor-graph back-end.
//!
//! Runs the same front-end, measurement models, and analytic Jacobians as the
//! EKF, but keeps a window of past scan states as optimization variables tied
//! together by IMU preintegration factors. Radar measurements enter as robust
//! (dynamic covariance scaling) factors; states that leave the window are
//! folded into a single marginal prior with linearization points pinned by a
//! frozen registry so repeated marginalization stays consistent.
//!
//! Per-scan flow, mirroring the EKF step for step so both back-ends feed the
//! front-end identical inputs and their decision logs agree:
//!
//! 1. preintegrate the buffered IMU segment and push a predicted state,
//! 2. slide the window (marginalize the oldest state) when over capacity,
//! 3. run front-end association at the newest predicted pose,
//! 4. apply landmark maintenance (matches, retirements, promotions),
//! 5. assemble the live graph and re-optimize,
//! 6. report decisions plus solver/factor diagnostics.

use std::collections::VecDeque;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::ekf::update::ransac_velocity;
use crate::ekf::{InitialNav, NavState, ProcessNoise, RansacConfig, RansacReport};
use crate::geom::{Pose, Rotation};
use crate::matching::frontend::{FrontEnd, FrontEndConfig, ScanDecisions};
use crate::models::{radar_to_world, world_to_radar};
use crate::types::{ImuSample, RadarScan};

use super::factor::{Factor, MarginalPrior};
use super::marginalize::{marginalize, FrozenRegistry};
use super::preintegrate::{preintegrate, PreintFactor};
use super::radar_factors::{DistanceFgFactor, DopplerFgFactor, LandmarkFgFactor};
use super::solver::{solve_lm, Graph, LmConfig, SolveReport};
use super::variables::{Values, VarKey, VarValue};
use super::FgError;

/// Factor-graph back-end configuration. Front-end, RANSAC, and measurement
/// sigmas default to the same values as the EKF so the two back-ends are
/// directly comparable on one dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FgConfig {
    pub noise: ProcessNoise,
    /// Distance / landmark range measurement sigma [m].
    pub sigma_d: f64,
    /// Doppler measurement sigma [m/s].
    pub sigma_v: f64,
    /// Sliding-window length in scan states (>= 2).
    pub window: usize,
    /// Robust-kernel parameter for Doppler factors, in squared whitened
    /// residual (chi-squared) units: normalized errors (r/sigma)^2 below phi
    /// keep full weight, larger ones are smoothly down-weighted.
    pub dcs_phi_doppler: f64,
    /// Robust-kernel parameter for trail distance factors (chi-squared units).
    pub dcs_phi_distance: f64,
    /// Robust-kernel parameter for landmark range factors (chi-squared units).
    pub dcs_phi_landmark: f64,
    /// Cap on simultaneously maintained landmarks.
    pub max_landmarks: usize,
    pub ransac: RansacConfig,
    pub frontend: FrontEndConfig,
    pub lm: LmConfig,
}

impl Default for FgConfig {
    fn default() -> Self {
        FgConfig {
            noise: ProcessNoise::default(),
            sigma_d: 0.05,
            sigma_v: 0.05,
            window: 10,
            dcs_phi_doppler: 1.0,
            dcs_phi_distance: 1.0,
            dcs_phi_landmark: 1.0,
            max_landmarks: 20,
            ransac: RansacConfig::default(),
            frontend: FrontEndConfig::default(),
            lm: LmConfig::default(),
        }
    }
}

/// One scan state kept in the sliding window.
#[derive(Clone, Copy, Debug)]
struct WindowState {
    scan_index: u64,
    t: f64,
    nav: NavState,
}

/// A persistent landmark tracked by the graph. Unlike the EKF (which deletes
/// a landmark the moment the front-end drops it), the graph keeps the
/// variable and its remaining range observations alive until the last
/// observing state leaves the window; only then is it marginalized out. The
/// front-end sees no difference: retired landmarks are no longer offered for
/// matching, exactly like EKF-removed ones.
#[derive(Clone, Debug)]
struct FgLandmark {
    id: u64,
    /// World-frame position estimate (an optimization variable).
    p: Vector3<f64>,
    last_matched_scan: u64,
    /// `(scan index, measured range)` per observation, oldest first; every
    /// referenced scan is in the window.
    obs: Vec<(u64, f64)>,
}

/// Number of factors of each kind in the last solved graph.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct FactorCounts {
    pub preint: usize,
    pub doppler: usize,
    pub distance: usize,
    pub landmark: usize,
    pub priors: usize,
}

/// Per-scan diagnostics of the graph back-end.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FgReport {
    pub counts: FactorCounts,
    pub solve: SolveReport,
    pub ransac: RansacReport,
    /// Scan indices marginalized out this step (at most one).
    pub marginalized_states: Vec<u64>,
    /// Landmark ids folded into the prior this step.
    pub marginalized_landmarks: Vec<u64>,
}

/// Result of folding one radar scan into the graph.
#[derive(Clone, Debug)]
pub struct FgScanResult {
    pub decisions: ScanDecisions,
    pub report: FgReport,
}

/// Sliding-window radar-inertial factor-graph estimator.
pub struct FgEstimator {
    pub cfg: FgConfig,
    extrinsics: Pose,
    init_nav: NavState,
    init_sigmas: [f64; 5],
    /// Time of the most recent IMU sample (or the initial time).
    t: f64,
    window: VecDeque<WindowState>,
    /// `preints[i]` is the between factor `window[i] -> window[i+1]`.
    preints: VecDeque<PreintFactor>,
    landmarks: Vec<FgLandmark>,
    /// Ids of landmarks offered for matching, in the same order the EKF keeps
    /// its landmark list (insertion order, preserved on removal) so both
    /// back-ends present identical candidate sequences to the front-end.
    active: Vec<u64>,
    /// Marginal prior chain; exactly one entry once the first scan arrived.
    priors: Vec<MarginalPrior>,
    registry: FrozenRegistry,
    /// IMU samples since the last scan, starting with the sample at it.
    imu_buf: Vec<ImuSample>,
    frontend: FrontEnd,
}

impl FgEstimator {
    pub fn new(cfg: FgConfig, init: InitialNav, extrinsics: Pose) -> Self {
        assert!(cfg.window >= 2, "window must hold at least two states");
        assert!(
            cfg.frontend.trail_len <= cfg.window,
            "trail length must not exceed the window, or trail factors would \
             reference marginalized states"
        );
        let init_nav = NavState {
            p: init.p,
            q: Rotation::exp(&init.theta),
            v: init.v,
            ba: init.ba,
            bg: init.bg,
        };
        let init_sigmas = [
            init.sigma_p,
            init.sigma_theta,
            init.sigma_v,
            init.sigma_ba,
            init.sigma_bg,
        ];
        let frontend = FrontEnd::new(cfg.frontend);
        FgEstimator {
            cfg,
            extrinsics,
            init_nav,
            init_sigmas,
            t: init.t,
            window: VecDeque::new(),
            preints: VecDeque::new(),
            landmarks: Vec::new(),
            active: Vec::new(),
            priors: Vec::new(),
            registry: FrozenRegistry::new(),
            imu_buf: Vec::new(),
            frontend,
        }
    }

    /// Newest navigation state estimate.
    pub fn nav(&self) -> NavState {
        self.window.back().map_or(self.init_nav, |s| s.nav)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn frontend(&self) -> &FrontEnd {
        &self.frontend
    }

    pub fn extrinsics(&self) -> &Pose {
        &self.extrinsics
    }

    /// Scan indices currently in the window, oldest first.
    pub fn window_indices(&self) -> Vec<u64> {
        self.window.iter().map(|s| s.scan_index).collect()
    }

    /// State estimate for a scan still in the window.
    pub fn state_for_scan(&self, scan_index: u64) -> Option<NavState> {
        self.window
            .iter()
            .find(|s| s.scan_index == scan_index)
            .map(|s| s.nav)
    }

    /// `(scan index, scan time, state)` for every window entry, oldest
    /// first — the smoothed trajectory segment the graph currently holds.
    pub fn window_states(&self) -> Vec<(u64, f64, NavState)> {
        self.window.iter().map(|s| (s.scan_index, s.t, s.nav)).collect()
    }

    /// Ids of landmarks still offered for matching.
    pub fn active_landmarks(&self) -> &[u64] {
        &self.active
    }

    /// Position of a landmark still held by the graph (active or retired).
    pub fn landmark_position(&self, id: u64) -> Option<Vector3<f64>> {
        self.landmarks.iter().find(|l| l.id == id).map(|l| l.p)
    }

    pub fn registry(&self) -> &FrozenRegistry {
        &self.registry
    }

    /// Buffers one IMU sample for the next preintegrated segment.
    pub fn process_imu(&mut self, sample: ImuSample) -> Result<(), FgError> {
        if !(sample.accel.iter().all(|x| x.is_finite())
            && sample.gyro.iter().all(|x| x.is_finite())
            && sample.t.is_finite())
        {
            return Err(FgError::NonFiniteImu);
        }
        self.imu_buf.push(sample);
        self.t = sample.t;
        Ok(())
    }

    /// Folds one radar scan into the graph and re-optimizes the window.
    /// `gyro` is the raw rate of the nearest preceding IMU sample, used by
    /// the Doppler lever-arm term (bias-corrected from the optimized state).
    pub fn process_scan(
        &mut self,
        scan: &RadarScan,
        scan_index: u64,
        gyro: &Vector3<f64>,
    ) -> Result<FgScanResult, FgError> {
        if (self.t - scan.t).abs() > 1e-6 {
            return Err(FgError::TimeMismatch {
                state_t: self.t,
                scan_t: scan.t,
            });
        }

        // 1. New scan state from the preintegrated IMU segment.
        if let Some(back) = self.window.back().copied() {
            if scan_index <= back.scan_index {
                return Err(FgError::NonMonotonicScan(scan_index));
            }
            if self.imu_buf.len() < 2 {
                return Err(FgError::EmptySegment);
            }
            let pre = preintegrate(&self.imu_buf, back.nav.ba, back.nav.bg, &self.cfg.noise)?;
            let nav = pre.predict(&back.nav);
            self.preints
                .push_back(PreintFactor::new(back.scan_index, scan_index, pre, &self.cfg.noise)?);
            self.window.push_back(WindowState {
                scan_index,
                t: scan.t,
                nav,
            });
        } else {
            // First scan: anchor the graph with the initial-state prior.
            let mut nav = self.init_nav;
            if self.imu_buf.len() >= 2 {
                let pre = preintegrate(&self.imu_buf, nav.ba, nav.bg, &self.cfg.noise)?;
                nav = pre.predict(&nav);
            }
            self.window.push_back(WindowState {
                scan_index,
                t: scan.t,
                nav,
            });
            let key = VarKey::State(scan_index);
            self.priors.push(MarginalPrior::isotropic_blocks(
                key,
                VarValue::Nav(nav),
                &self.init_sigmas,
            ));
            self.registry.freeze(key, VarValue::Nav(nav));
        }
        // Seed the next segment with the sample at this scan time.
        if let Some(&last) = self.imu_buf.last() {
            self.imu_buf = vec![last];
        }

        // 2. Slide the window before association so trails and landmark
        //    observations can never reference a state that just left.
        let mut marginalized_states = Vec::new();
        let mut marginalized_landmarks = Vec::new();
        if self.window.len() > self.cfg.window {
            self.marginalize_oldest(&mut marginalized_states, &mut marginalized_landmarks)?;
        }

        // 3. Front-end association at the newest predicted pose.
        let newest_pose = self.window.back().expect("non-empty window").nav.pose();
        let association = {
            let landmarks = &self.landmarks;
            let predictions: Vec<(u64, Vector3<f64>)> = self
                .active
                .iter()
                .map(|&id| {
                    let l = landmarks
                        .iter()
                        .find(|l| l.id == id)
                        .expect("active landmark present");
                    (id, world_to_radar(&newest_pose, &self.extrinsics, &l.p))
                })
                .collect();
            let window = &self.window;
            let pose_for_scan = |si: u64| -> Option<Pose> {
                window
                    .iter()
                    .find(|s| s.scan_index == si)
                    .map(|s| s.nav.pose())
            };
            self.frontend.process_scan(
                scan,
                scan_index,
                &predictions,
                &pose_for_scan,
                &newest_pose,
                &self.extrinsics,
            )?
        };

        // 4. Landmark maintenance, in the same order as the EKF.
        for &(id, pi) in &association.landmark_matches {
            if let Some(l) = self.landmarks.iter_mut().find(|l| l.id == id) {
                l.last_matched_scan = scan_index;
                l.obs.push((scan_index, scan.points[pi].range()));
            }
        }
        for &id in &association.unmatched_landmarks {
            self.retire_landmark(id);
        }
        for promo in &association.promotions {
            while self.active.len() >= self.cfg.max_landmarks {
                let evict = self
                    .active
                    .iter()
                    .enumerate()
                    .min_by_key(|&(i, &id)| {
                        let last = self
                            .landmarks
                            .iter()
                            .find(|l| l.id == id)
                            .expect("active landmark present")
                            .last_matched_scan;
                        (last, i)
                    })
                    .map(|(_, &id)| id)
                    .expect("non-empty active landmark list");
                self.retire_landmark(evict);
            }
            let p_radar = scan.points[promo.point_index].position;
            self.landmarks.push(FgLandmark {
                id: promo.trail_id,
                p: radar_to_world(&newest_pose, &self.extrinsics, &p_radar),
                last_matched_scan: scan_index,
                obs: promo
                    .history
                    .iter()
                    .map(|o| (o.scan_index, o.point.norm()))
                    .collect(),
            });
            self.active.push(promo.trail_id);
        }

        // 5. Assemble the live graph.
        let mut counts = FactorCounts {
            preint: self.preints.len(),
            priors: self.priors.len(),
            ..FactorCounts::default()
        };
        let mut ransac = RansacReport {
            offered: scan.points.len(),
            ..RansacReport::default()
        };
        let mut transient: Vec<Box<dyn Factor>> = Vec::new();

        let dirs: Vec<Vector3<f64>> = scan.points.iter().map(|p| p.position).collect();
        let dopplers: Vec<f64> = scan.points.iter().map(|p| p.doppler).collect();
        match ransac_velocity(&dirs, &dopplers, &self.cfg.ransac, scan_index) {
            Some(fit) => {
                ransac.inliers = fit.inliers.len();
                for &i in &fit.inliers {
                    transient.push(Box::new(DopplerFgFactor::new(
                        scan_index,
                        dirs[i],
                        dopplers[i],
                        *gyro,
                        self.extrinsics,
                        self.cfg.sigma_v,
                        self.cfg.dcs_phi_doppler,
                    )));
                    counts.doppler += 1;
                }
            }
            None => ransac.skipped = true,
        }

        for m in &association.trail_matches {
            let measured = scan.points[m.point_index].range();
            for obs in &m.history {
                if !self.window.iter().any(|s| s.scan_index == obs.scan_index) {
                    return Err(FgError::StaleState(obs.scan_index));
                }
                transient.push(Box::new(DistanceFgFactor::new(
                    scan_index,
                    obs.scan_index,
                    m.trail_id,
                    obs.point,
                    measured,
                    self.extrinsics,
                    self.cfg.sigma_d,
                    self.cfg.dcs_phi_distance,
                )));
                counts.distance += 1;
            }
        }

        for l in &self.landmarks {
            for &(s, range) in &l.obs {
                if !self.window.iter().any(|w| w.scan_index == s) {
                    return Err(FgError::StaleState(s));
                }
                transient.push(Box::new(LandmarkFgFactor::new(
                    s,
                    l.id,
                    range,
                    self.extrinsics,
                    self.cfg.sigma_d,
                    self.cfg.dcs_phi_landmark,
                )));
                counts.landmark += 1;
            }
        }

        // 6. Solve and write the refined estimates back.
        let mut graph = Graph::new();
        for f in &self.preints {
            graph.factors.push(f);
        }
        for f in &transient {
            graph.factors.push(f.as_ref());
        }
        for p in &self.priors {
            graph.priors.push(p);
        }
        let (solved, solve) = solve_lm(&graph, self.build_values(), &self.cfg.lm)?;
        drop(graph);
        self.write_back(&solved);

        Ok(FgScanResult {
            decisions: association.decisions,
            report: FgReport {
                counts,
                solve,
                ransac,
                marginalized_states,
                marginalized_landmarks,
            },
        })
    }

    /// Folds the oldest window state — plus every landmark whose last
    /// observation is at or before it — into the marginal prior.
    fn marginalize_oldest(
        &mut self,
        out_states: &mut Vec<u64>,
        out_landmarks: &mut Vec<u64>,
    ) -> Result<(), FgError> {
        let oldest = self.window.front().expect("non-empty window").scan_index;

        // Nothing built after this call can reference `oldest` (trail factors
        // reach back at most `trail_len <= window` scans and the front-end
        // evicts the scan below), so the sub-graph is exactly: the between
        // factor leaving the oldest state, every landmark observation taken
        // at it, and the whole prior chain.
        let mut mu = vec![VarKey::State(oldest)];
        for l in &self.landmarks {
            if l.obs.last().is_some_and(|&(s, _)| s <= oldest) {
                mu.push(VarKey::Landmark(l.id));
            }
        }

        let mut obs_factors: Vec<LandmarkFgFactor> = Vec::new();
        for l in &self.landmarks {
            for &(s, range) in &l.obs {
                if s == oldest {
                    obs_factors.push(LandmarkFgFactor::new(
                        s,
                        l.id,
                        range,
                        self.extrinsics,
                        self.cfg.sigma_d,
                        self.cfg.dcs_phi_landmark,
                    ));
                }
            }
        }
        let front_preint = self
            .preints
            .front()
            .expect("between factor for the oldest state");
        let mut fs: Vec<&dyn Factor> = vec![front_preint];
        for f in &obs_factors {
            fs.push(f);
        }
        let prior_refs: Vec<&MarginalPrior> = self.priors.iter().collect();
        let values = self.build_values();
        let out = marginalize(&fs, &prior_refs, &mu, &values, &mut self.registry)?;
        assert_eq!(
            out.consumed_factors.len(),
            fs.len(),
            "every sub-graph factor touches the marginalized set"
        );
        assert_eq!(
            out.consumed_priors.len(),
            prior_refs.len(),
            "the prior chain always touches the oldest state"
        );
        self.priors = vec![out.prior];

        self.window.pop_front();
        self.preints.pop_front();
        for l in &mut self.landmarks {
            l.obs.retain(|&(s, _)| s != oldest);
        }
        let gone: Vec<u64> = mu
            .iter()
            .filter_map(|k| match k {
                VarKey::Landmark(id) => Some(*id),
                VarKey::State(_) => None,
            })
            .collect();
        self.landmarks.retain(|l| !gone.contains(&l.id));
        self.active.retain(|id| !gone.contains(id));
        self.frontend.evict_scan(oldest);

        out_states.push(oldest);
        out_landmarks.extend(gone);
        Ok(())
    }

    /// Stops offering a landmark for matching; its variable and remaining
    /// observations stay in the graph until marginalized.
    fn retire_landmark(&mut self, id: u64) {
        self.active.retain(|&a| a != id);
    }

    fn build_values(&self) -> Values {
        let mut v = Values::new();
        for s in &self.window {
            v.insert(VarKey::State(s.scan_index), VarValue::Nav(s.nav));
        }
        for l in &self.landmarks {
            v.insert(VarKey::Landmark(l.id), VarValue::Point(l.p));
        }
        v
    }

    fn write_back(&mut self, solved: &Values) {
        for s in &mut self.window {
            if let Some(VarValue::Nav(nav)) = solved.get(&VarKey::State(s.scan_index)) {
                s.nav = *nav;
            }
        }
        for l in &mut self.landmarks {
            if let Some(VarValue::Point(p)) = solved.get(&VarKey::Landmark(l.id)) {
                l.p = *p;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ekf::{Ekf, EkfConfig};
    use crate::geom::GRAVITY;
    use crate::models::radar_to_world;
    use crate::types::RadarPoint;
    use nalgebra::vector;

    fn test_extrinsics() -> Pose {
        Pose::new(
            Rotation::rot_y(45f64.to_radians()),
            vector![0.075, -0.01, -0.04],
        )
    }

    fn world_points() -> Vec<Vector3<f64>> {
        [
            vector![2.0, 0.5, 0.1],
            vector![3.0, -1.0, 0.4],
            vector![1.5, 1.2, -0.2],
            vector![2.5, 0.0, 0.8],
        ]
        .iter()
        .map(|w| radar_to_world(&Pose::identity(), &test_extrinsics(), w))
        .collect()
    }

    /// Exact static scan: ranges and Dopplers as seen from `pose`.
    fn hover_scan(t: f64, pose: &Pose, calib: &Pose, points: &[Vector3<f64>]) -> RadarScan {
        RadarScan {
            t,
            points: points
                .iter()
                .map(|w| RadarPoint {
                    position: world_to_radar(pose, calib, w),
                    doppler: 0.0,
                    intensity: 5.0,
                    truth_id: None,
                })
                .collect(),
        }
    }

    fn rest_imu(t: f64) -> ImuSample {
        ImuSample {
            t,
            accel: vector![0.0, 0.0, GRAVITY],
            gyro: Vector3::zeros(),
        }
    }

    const IMU_RATE: f64 = 200.0;
    /// IMU samples between consecutive scans.
    const SCAN_GAP: usize = 13;

    /// Drives the graph through `n_scans` exact static scans with rest IMU
    /// in between, returning the per-scan results.
    fn run_static_fg(fg: &mut FgEstimator, n_scans: usize) -> Vec<FgScanResult> {
        let calib = test_extrinsics();
        let pts = world_points();
        let mut t = 0.0;
        fg.process_imu(rest_imu(t)).unwrap();
        (0..n_scans)
            .map(|k| {
                for _ in 0..SCAN_GAP {
                    t += 1.0 / IMU_RATE;
                    fg.process_imu(rest_imu(t)).unwrap();
                }
                let scan = hover_scan(t, &Pose::identity(), &calib, &pts);
                fg.process_scan(&scan, k as u64, &Vector3::zeros()).unwrap()
            })
            .collect()
    }

    /// A static platform with exact measurements must stay put and the two
    /// back-ends must log identical association decisions at every scan.
    #[test]
    fn static_zero_noise_matches_ekf_decisions() {
        let calib = test_extrinsics();
        let pts = world_points();
        let mut fg = FgEstimator::new(FgConfig::default(), InitialNav::default(), calib);
        let mut ekf = Ekf::new(EkfConfig::default(), InitialNav::default(), calib);

        let mut t = 0.0;
        fg.process_imu(rest_imu(t)).unwrap();
        ekf.process_imu(rest_imu(t)).unwrap();
        for k in 0..14u64 {
            for _ in 0..SCAN_GAP {
                t += 1.0 / IMU_RATE;
                fg.process_imu(rest_imu(t)).unwrap();
                ekf.process_imu(rest_imu(t)).unwrap();
            }
            let scan = hover_scan(t, &Pose::identity(), &calib, &pts);
            let f = fg.process_scan(&scan, k, &Vector3::zeros()).unwrap();
            let e = ekf.process_scan(&scan, k, &Vector3::zeros()).unwrap();
            assert_eq!(f.decisions, e.decisions, "scan {k}");
            assert!(f.report.solve.converged || f.report.solve.final_cost < 1e-12);
        }
        let nav = fg.nav();
        assert!(nav.p.norm() < 1e-7, "drift {}", nav.p.norm());
        assert!(nav.v.norm() < 1e-7);
        assert!(nav.q.angle_to(&Rotation::identity()) < 1e-7);
    }

    /// Factor bookkeeping on a short window: N−1 between factors, one
    /// distance factor per trail-history observation, Dopplers for every
    /// RANSAC inlier, exactly one prior.
    #[test]
    fn factor_counts_follow_the_graph_structure() {
        let mut fg = FgEstimator::new(FgConfig::default(), InitialNav::default(), test_extrinsics());
        let results = run_static_fg(&mut fg, 6);
        for (k, r) in results.iter().enumerate() {
            let c = &r.report.counts;
            assert_eq!(c.preint, k, "between factors at scan {k}");
            assert_eq!(c.priors, 1);
            assert_eq!(c.doppler, 4, "all four points are Doppler inliers");
            // Each of the 4 trails carries its full pre-append history.
            assert_eq!(c.distance, 4 * k, "trail observations at scan {k}");
            assert_eq!(c.landmark, 0, "no promotions before the trail length");
            assert!(r.report.ransac.inliers == 4 && !r.report.ransac.skipped);
        }
    }

    /// The window caps at the configured size; the oldest state is
    /// marginalized exactly once per scan afterwards and its linearization
    /// point stays frozen in the registry.
    #[test]
    fn window_slides_and_marginalizes_the_oldest_state() {
        let mut cfg = FgConfig::default();
        cfg.window = 10;
        let mut fg = FgEstimator::new(cfg, InitialNav::default(), test_extrinsics());
        let results = run_static_fg(&mut fg, 15);

        for (k, r) in results.iter().enumerate() {
            if k < 10 {
                assert!(r.report.marginalized_states.is_empty(), "scan {k}");
            } else {
                assert_eq!(r.report.marginalized_states, vec![k as u64 - 10], "scan {k}");
            }
            // The prior chain is collapsed into a single marginal each slide.
            assert_eq!(r.report.counts.priors, 1, "scan {k}");
        }
        assert_eq!(fg.window_indices(), (5..15).collect::<Vec<u64>>());
        // States 0..=4 left the window; their linearization points are pinned.
        for s in 0..5u64 {
            assert!(fg.registry().contains(&VarKey::State(s)), "state {s}");
        }
    }

    /// Landmarks promoted from trails keep their full observation history as
    /// range factors, and the factor census matches the stored observations.
    #[test]
    fn promoted_landmarks_carry_their_observation_history() {
        let mut fg = FgEstimator::new(FgConfig::default(), InitialNav::default(), test_extrinsics());
        let results = run_static_fg(&mut fg, 9);
        // Default trail length is 7: promotion happens at scan 6.
        let promo_scan = &results[6];
        assert_eq!(promo_scan.decisions.promoted_trails.len(), 4);
        // All 4 landmarks enter with 7 observations each (scans 0..=6).
        assert_eq!(promo_scan.report.counts.landmark, 28);
        assert_eq!(fg.active_landmarks().len(), 4);
        // Afterwards each matched landmark gains one observation per scan.
        assert_eq!(results[7].report.counts.landmark, 32);
        assert_eq!(results[8].report.counts.landmark, 36);
        // No trail factors remain once every point belongs to a landmark.
        assert_eq!(results[8].report.counts.distance, 0);
        // Landmark positions converged onto the true scatterers.
        for (id, w) in fg.active_landmarks().to_vec().iter().zip(world_points()) {
            let p = fg.landmark_position(*id).unwrap();
            assert!((p - w).norm() < 1e-6, "landmark {id}: {}", (p - w).norm());
        }
    }

    /// A landmark whose scatterer disappears is retired (no longer offered to
    /// the front-end) but keeps constraining the graph until its last
    /// observing state leaves the window; then it is marginalized out.
    #[test]
    fn vanished_landmark_is_retired_then_marginalized() {
        let mut cfg = FgConfig::default();
        cfg.window = 8;
        let mut fg = FgEstimator::new(cfg, InitialNav::default(), test_extrinsics());
        let calib = test_extrinsics();
        let pts = world_points();
        let imu_rate = 200.0;
        let scan_gap = 13;
        let mut t = 0.0;
        fg.process_imu(rest_imu(t)).unwrap();
        let mut retired_at = None;
        let mut marginalized_at = None;
        for k in 0..24u64 {
            for _ in 0..scan_gap {
                t += 1.0 / imu_rate;
                fg.process_imu(rest_imu(t)).unwrap();
            }
            // Scatterer 0 vanishes from scan 10 onward.
            let visible: Vec<Vector3<f64>> = if k < 10 {
                pts.clone()
            } else {
                pts[1..].to_vec()
            };
            let scan = hover_scan(t, &Pose::identity(), &calib, &visible);
            let r = fg.process_scan(&scan, k, &Vector3::zeros()).unwrap();
            if !r.decisions.removed_landmarks.is_empty() && retired_at.is_none() {
                retired_at = Some(k);
            }
            if !r.report.marginalized_landmarks.is_empty() {
                assert!(marginalized_at.is_none(), "marginalized once");
                marginalized_at = Some((k, r.report.marginalized_landmarks.clone()));
            }
        }
        // Promotion at scan 6, last match at scan 9, retirement at scan 10.
        assert_eq!(retired_at, Some(10));
        assert_eq!(fg.active_landmarks().len(), 3);
        let (k_marg, ids) = marginalized_at.expect("dead landmark was marginalized");
        assert_eq!(ids.len(), 1);
        let id = ids[0];
        // Marginalization happens when the last observing scan (9) leaves the
        // 8-state window, i.e. when scan 17 pushes the window to 9 states.
        assert_eq!(k_marg, 17);
        assert!(fg.landmark_position(id).is_none(), "variable removed");
        assert!(fg.registry().contains(&VarKey::Landmark(id)), "frozen");
    }

    /// Starting the graph from a badly wrong velocity on a static scene,
    /// with an initial covariance wide enough to admit the error: the
    /// Doppler and range factors pull the estimate back toward zero within
    /// the first few scans. (A tight initial covariance would instead anchor
    /// the wrong velocity — the filter-consistency failure mode both
    /// back-ends are benchmarked on elsewhere.)
    #[test]
    fn wrong_initial_velocity_is_recovered() {
        let mut init = InitialNav::default();
        init.v = vector![0.5, 0.5, 0.0];
        init.sigma_v = 1.0;
        let mut fg = FgEstimator::new(FgConfig::default(), init, test_extrinsics());
        run_static_fg(&mut fg, 12);
        let nav = fg.nav();
        assert!(nav.v.norm() < 0.1, "residual velocity {}", nav.v.norm());
    }

    #[test]
    fn scan_time_mismatch_is_rejected() {
        let mut fg = FgEstimator::new(FgConfig::default(), InitialNav::default(), Pose::identity());
        fg.process_imu(rest_imu(0.0)).unwrap();
        let scan = RadarScan {
            t: 0.5,
            points: vec![],
        };
        assert!(matches!(
            fg.process_scan(&scan, 0, &Vector3::zeros()),
            Err(FgError::TimeMismatch { .. })
        ));
    }

    #[test]
    fn non_monotone_scan_index_is_rejected() {
        let mut fg = FgEstimator::new(FgConfig::default(), InitialNav::default(), Pose::identity());
        let mut t = 0.0;
        fg.process_imu(rest_imu(t)).unwrap();
        let scan = RadarScan {
            t,
            points: vec![],
        };
        fg.process_scan(&scan, 5, &Vector3::zeros()).unwrap();
        for _ in 0..3 {
            t += 0.005;
            fg.process_imu(rest_imu(t)).unwrap();
        }
        let scan = RadarScan {
            t,
            points: vec![],
        };
        assert!(matches!(
            fg.process_scan(&scan, 5, &Vector3::zeros()),
            Err(FgError::NonMonotonicScan(5))
        ));
    }
}
