//! Filter state container: nominal values plus the joint error-state
//! covariance, with the bookkeeping for clones and landmarks.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{Pose, Rotation};

/// Error-state dimensions and offsets. The covariance is ordered
/// `[nav(15) | calib(6) | clones(6 each) | landmarks(3 each)]`, with the nav
/// block `[p̃, θ̃, ṽ, b̃_a, b̃_ω]` and pose-typed blocks `[p̃, θ̃]`.
pub const NAV_DIM: usize = 15;
pub const CALIB_DIM: usize = 6;
pub const CLONE_DIM: usize = 6;
pub const LM_DIM: usize = 3;
pub const STATIC_DIM: usize = NAV_DIM + CALIB_DIM;

pub const IDX_P: usize = 0;
pub const IDX_TH: usize = 3;
pub const IDX_V: usize = 6;
pub const IDX_BA: usize = 9;
pub const IDX_BG: usize = 12;
pub const IDX_CALIB_P: usize = 15;
pub const IDX_CALIB_TH: usize = 18;

/// Nominal IMU state.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NavState {
    pub p: Vector3<f64>,
    pub q: Rotation,
    pub v: Vector3<f64>,
    pub ba: Vector3<f64>,
    pub bg: Vector3<f64>,
}

impl NavState {
    pub fn pose(&self) -> Pose {
        Pose::new(self.q, self.p)
    }
}

/// A cloned past pose, keyed by the radar scan it was taken for.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CloneState {
    pub scan_index: u64,
    pub t: f64,
    pub pose: Pose,
}

/// A persistent world landmark.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LandmarkState {
    pub id: u64,
    pub p: Vector3<f64>,
    pub last_matched_scan: u64,
}

/// Full filter state: nominal values and the joint covariance over the error
/// state. All mutation goes through methods that keep the covariance
/// dimensions in lockstep with the clone/landmark lists.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FilterState {
    pub t: f64,
    pub nav: NavState,
    /// Radar extrinsics `T_IR` (radar pose in the IMU frame).
    pub calib: Pose,
    pub clones: VecDeque<CloneState>,
    pub landmarks: Vec<LandmarkState>,
    pub cov: DMatrix<f64>,
}

impl FilterState {
    /// A state at rest at the origin with zero covariance.
    pub fn new(t: f64, nav: NavState, calib: Pose) -> Self {
        FilterState {
            t,
            nav,
            calib,
            clones: VecDeque::new(),
            landmarks: Vec::new(),
            cov: DMatrix::zeros(STATIC_DIM, STATIC_DIM),
        }
    }

    pub fn dim(&self) -> usize {
        STATIC_DIM + CLONE_DIM * self.clones.len() + LM_DIM * self.landmarks.len()
    }

    /// Column/row offset of clone `i` (insertion order).
    pub fn clone_offset(&self, i: usize) -> usize {
        STATIC_DIM + CLONE_DIM * i
    }

    /// Column/row offset of landmark `m` (list order).
    pub fn landmark_offset(&self, m: usize) -> usize {
        STATIC_DIM + CLONE_DIM * self.clones.len() + LM_DIM * m
    }

    pub fn clone_by_scan(&self, scan_index: u64) -> Option<(usize, &CloneState)> {
        self.clones
            .iter()
            .enumerate()
            .find(|(_, c)| c.scan_index == scan_index)
    }

    pub fn landmark_by_id(&self, id: u64) -> Option<(usize, &LandmarkState)> {
        self.landmarks.iter().enumerate().find(|(_, l)| l.id == id)
    }

    /// Injects an error vector into the nominal state (retraction).
    pub fn boxplus(&mut self, delta: &DVector<f64>) {
        assert_eq!(delta.len(), self.dim());
        self.nav.p += delta.fixed_rows::<3>(IDX_P).into_owned();
        self.nav.q = self
            .nav
            .q
            .boxplus(&delta.fixed_rows::<3>(IDX_TH).into_owned());
        self.nav.v += delta.fixed_rows::<3>(IDX_V).into_owned();
        self.nav.ba += delta.fixed_rows::<3>(IDX_BA).into_owned();
        self.nav.bg += delta.fixed_rows::<3>(IDX_BG).into_owned();
        self.calib = self.calib.boxplus(
            &delta.fixed_rows::<3>(IDX_CALIB_P).into_owned(),
            &delta.fixed_rows::<3>(IDX_CALIB_TH).into_owned(),
        );
        for i in 0..self.clones.len() {
            let at = self.clone_offset(i);
            let dp = delta.fixed_rows::<3>(at).into_owned();
            let dth = delta.fixed_rows::<3>(at + 3).into_owned();
            self.clones[i].pose = self.clones[i].pose.boxplus(&dp, &dth);
        }
        for m in 0..self.landmarks.len() {
            let at = self.landmark_offset(m);
            self.landmarks[m].p += delta.fixed_rows::<3>(at).into_owned();
        }
    }

    /// Inverse retraction `self ⊟ other`; both states must hold the same
    /// clones and landmarks.
    pub fn boxminus(&self, other: &FilterState) -> DVector<f64> {
        assert_eq!(self.clones.len(), other.clones.len());
        assert_eq!(self.landmarks.len(), other.landmarks.len());
        let mut delta = DVector::zeros(self.dim());
        delta
            .fixed_rows_mut::<3>(IDX_P)
            .copy_from(&(self.nav.p - other.nav.p));
        delta
            .fixed_rows_mut::<3>(IDX_TH)
            .copy_from(&self.nav.q.boxminus(&other.nav.q));
        delta
            .fixed_rows_mut::<3>(IDX_V)
            .copy_from(&(self.nav.v - other.nav.v));
        delta
            .fixed_rows_mut::<3>(IDX_BA)
            .copy_from(&(self.nav.ba - other.nav.ba));
        delta
            .fixed_rows_mut::<3>(IDX_BG)
            .copy_from(&(self.nav.bg - other.nav.bg));
        let (dp, dth) = self.calib.boxminus(&other.calib);
        delta.fixed_rows_mut::<3>(IDX_CALIB_P).copy_from(&dp);
        delta.fixed_rows_mut::<3>(IDX_CALIB_TH).copy_from(&dth);
        for i in 0..self.clones.len() {
            let at = self.clone_offset(i);
            let (dp, dth) = self.clones[i].pose.boxminus(&other.clones[i].pose);
            delta.fixed_rows_mut::<3>(at).copy_from(&dp);
            delta.fixed_rows_mut::<3>(at + 3).copy_from(&dth);
        }
        for m in 0..self.landmarks.len() {
            let at = self.landmark_offset(m);
            delta
                .fixed_rows_mut::<3>(at)
                .copy_from(&(self.landmarks[m].p - other.landmarks[m].p));
        }
        delta
    }

    /// Rebuilds the covariance as `cov'[i,j] = cov[map[i], map[j]]`. Each
    /// output entry is a plain copy, so duplicated rows are bit-exact.
    fn reindex_cov(&mut self, map: &[usize]) {
        let old = &self.cov;
        self.cov = DMatrix::from_fn(map.len(), map.len(), |i, j| old[(map[i], map[j])]);
    }

    /// Appends a clone of the current pose. The new rows/cols are copies of
    /// the pose rows/cols (indices 0..6), making the clone fully correlated
    /// with the pose it copies.
    pub fn add_clone(&mut self, scan_index: u64, t: f64) {
        let at = STATIC_DIM + CLONE_DIM * self.clones.len();
        let dim = self.dim();
        let map: Vec<usize> = (0..at).chain(0..CLONE_DIM).chain(at..dim).collect();
        self.reindex_cov(&map);
        self.clones.push_back(CloneState {
            scan_index,
            t,
            pose: self.nav.pose(),
        });
    }

    /// Removes the oldest clone and its covariance rows/cols, returning its
    /// scan index.
    pub fn remove_oldest_clone(&mut self) -> Option<u64> {
        let clone = self.clones.pop_front()?;
        let at = STATIC_DIM;
        let dim = self.cov.nrows();
        let map: Vec<usize> = (0..at).chain(at + CLONE_DIM..dim).collect();
        self.reindex_cov(&map);
        Some(clone.scan_index)
    }

    /// Appends a landmark with the given marginal covariance and cross
    /// covariance against the existing error state (3 × dim).
    pub fn add_landmark(
        &mut self,
        id: u64,
        p: Vector3<f64>,
        last_matched_scan: u64,
        marginal: Matrix3<f64>,
        cross: &DMatrix<f64>,
    ) {
        let dim = self.dim();
        assert_eq!(cross.nrows(), LM_DIM);
        assert_eq!(cross.ncols(), dim);
        let mut cov = DMatrix::zeros(dim + LM_DIM, dim + LM_DIM);
        cov.view_mut((0, 0), (dim, dim)).copy_from(&self.cov);
        cov.view_mut((dim, 0), (LM_DIM, dim)).copy_from(cross);
        cov.view_mut((0, dim), (dim, LM_DIM))
            .copy_from(&cross.transpose());
        cov.view_mut((dim, dim), (LM_DIM, LM_DIM))
            .copy_from(&marginal);
        self.cov = cov;
        self.landmarks.push(LandmarkState {
            id,
            p,
            last_matched_scan,
        });
    }

    /// Removes a landmark by id, shrinking the covariance.
    pub fn remove_landmark(&mut self, id: u64) -> bool {
        let Some((m, _)) = self.landmark_by_id(id) else {
            return false;
        };
        let at = self.landmark_offset(m);
        let dim = self.dim();
        let map: Vec<usize> = (0..at).chain(at + LM_DIM..dim).collect();
        self.reindex_cov(&map);
        self.landmarks.remove(m);
        true
    }

    /// Resymmetrizes the covariance in place.
    pub fn symmetrize(&mut self) {
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        self.cov = sym;
    }

    /// Checks the covariance invariants: symmetric within `1e-9` and minimum
    /// eigenvalue above `−1e-9`.
    pub fn check_invariants(&self) -> Result<(), String> {
        let n = self.dim();
        if self.cov.nrows() != n || self.cov.ncols() != n {
            return Err(format!(
                "covariance is {}×{}, expected {}×{}",
                self.cov.nrows(),
                self.cov.ncols(),
                n,
                n
            ));
        }
        let mut max_asym = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                max_asym = max_asym.max((self.cov[(i, j)] - self.cov[(j, i)]).abs());
            }
        }
        if max_asym > 1e-9 {
            return Err(format!("covariance asymmetry {max_asym:.3e} exceeds 1e-9"));
        }
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        let eigs = sym.symmetric_eigenvalues();
        let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig <= -1e-9 {
            return Err(format!("covariance min eigenvalue {min_eig:.3e} ≤ -1e-9"));
        }
        Ok(())
    }
}
