//! Trajectory evaluation: MAE/RMSE norms, final drift percentage, and NEES
//! consistency analysis with chi-squared bounds, plus paired back-end
//! comparison tables.
//!
//! All metrics compare the raw estimate against ground truth without any
//! spatial or yaw alignment: position and yaw are unobservable for this
//! sensor suite, and aligning them away would hide exactly the drift these
//! numbers are meant to expose. Every metric depends only on time
//! *differences*, so shifting both series by the same offset changes nothing.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::geom::Pose;
use crate::sim::TruthState;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty run")]
    EmptyRun,
    #[error("zero traveled distance")]
    ZeroPathLength,
    #[error("snapshot at t={t} is {dt} s from the nearest truth sample (limit {limit})")]
    Misaligned { t: f64, dt: f64, limit: f64 },
    #[error("snapshots carry no position covariance")]
    MissingCovariance,
    #[error("singular position covariance at t={0}")]
    SingularCovariance(f64),
    #[error("mismatched run sets: {0}")]
    MismatchedRuns(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// One per-scan estimator output record, as written by the run pipeline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub scan_index: u64,
    /// World-from-body pose estimate.
    pub pose: Pose,
    /// World-frame velocity estimate [m/s].
    pub v: Vector3<f64>,
    pub ba: Vector3<f64>,
    pub bg: Vector3<f64>,
    /// Current radar-extrinsics estimate (radar pose in the IMU frame).
    pub calib: Pose,
    /// Marginal position covariance, when the back-end provides one.
    pub pos_cov: Option<Matrix3<f64>>,
}

/// Time-synced estimate/truth pairs. No spatial alignment is applied.
#[derive(Clone, Debug)]
pub struct AlignedRun {
    pub pairs: Vec<(Snapshot, TruthState)>,
}

impl AlignedRun {
    /// Pairs each snapshot with the nearest-in-time truth sample.
    ///
    /// Nearest-neighbor only — orientation is never interpolated. Each match
    /// must land within half an estimate period (the median snapshot
    /// spacing); a larger gap means the series genuinely do not overlap and
    /// is an error rather than a silent bad pairing.
    pub fn align(snapshots: &[Snapshot], truth: &[TruthState]) -> Result<AlignedRun, EvalError> {
        if snapshots.is_empty() {
            return Err(EvalError::EmptyRun);
        }
        if truth.is_empty() {
            return Err(EvalError::Invalid("empty ground truth".into()));
        }
        if truth.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(EvalError::Invalid("ground-truth times not sorted".into()));
        }
        let limit = match estimate_period(snapshots) {
            Some(p) => 0.5 * p,
            None => f64::INFINITY, // a single snapshot defines no period
        };
        let times: Vec<f64> = truth.iter().map(|s| s.t).collect();
        let mut pairs = Vec::with_capacity(snapshots.len());
        for snap in snapshots {
            let i = nearest_index(&times, snap.t);
            let dt = (times[i] - snap.t).abs();
            if dt > limit {
                return Err(EvalError::Misaligned { t: snap.t, dt, limit });
            }
            pairs.push((snap.clone(), truth[i].clone()));
        }
        Ok(AlignedRun { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Median spacing between consecutive snapshot timestamps.
fn estimate_period(snapshots: &[Snapshot]) -> Option<f64> {
    if snapshots.len() < 2 {
        return None;
    }
    let mut gaps: Vec<f64> = snapshots.windows(2).map(|w| w[1].t - w[0].t).collect();
    gaps.sort_by(f64::total_cmp);
    Some(gaps[gaps.len() / 2])
}

/// Index of the element of sorted `times` closest to `t`.
fn nearest_index(times: &[f64], t: f64) -> usize {
    let i = times.partition_point(|&x| x < t);
    if i == 0 {
        return 0;
    }
    if i == times.len() {
        return times.len() - 1;
    }
    if (t - times[i - 1]).abs() <= (times[i] - t).abs() {
        i - 1
    } else {
        i
    }
}

/// Norm of the per-axis mean-absolute-error vector of position [m].
///
/// The per-axis MAE is taken first and the 3-vector of axis values is then
/// normed (not the other way around).
pub fn mae_norm(run: &AlignedRun) -> Result<f64, EvalError> {
    if run.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let mut acc = Vector3::zeros();
    for (est, truth) in &run.pairs {
        acc += (est.pose.trans - truth.pose.trans).abs();
    }
    Ok((acc / run.len() as f64).norm())
}

/// Norm of the per-axis RMSE vector of position [m].
pub fn rmse_position_norm(run: &AlignedRun) -> Result<f64, EvalError> {
    if run.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let mut acc = Vector3::zeros();
    for (est, truth) in &run.pairs {
        let e = est.pose.trans - truth.pose.trans;
        acc += e.component_mul(&e);
    }
    Ok((acc / run.len() as f64).map(f64::sqrt).norm())
}

/// Norm of the per-axis RMSE vector of attitude [deg].
///
/// Per-axis errors are the roll/pitch/yaw Euler decomposition of the error
/// rotation `R_true⁻¹ R_est`, which for the small errors these runs produce
/// coincides with the attitude error vector and never wraps.
pub fn rmse_attitude_deg(run: &AlignedRun) -> Result<f64, EvalError> {
    if run.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let mut acc = Vector3::zeros();
    for (est, truth) in &run.pairs {
        let err = truth.pose.rot.inverse().compose(&est.pose.rot);
        let (r, p, y) = err.euler_angles();
        let e = Vector3::new(r, p, y);
        acc += e.component_mul(&e);
    }
    Ok((acc / run.len() as f64).map(f64::sqrt).norm().to_degrees())
}

/// Sum of consecutive straight-line segments through `points`.
pub fn path_length(points: impl Iterator<Item = Vector3<f64>>) -> f64 {
    let mut total = 0.0;
    let mut prev: Option<Vector3<f64>> = None;
    for p in points {
        if let Some(q) = prev {
            total += (p - q).norm();
        }
        prev = Some(p);
    }
    total
}

/// Final position error as a percentage of the ground-truth path length.
///
/// `100 · ‖p_est(end) − p_true(end)‖ / traveled distance`, with the traveled
/// distance chained through the run's ground-truth positions.
pub fn final_drift_pct(run: &AlignedRun) -> Result<f64, EvalError> {
    if run.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let dist = path_length(run.pairs.iter().map(|(_, t)| t.pose.trans));
    if dist <= 0.0 {
        return Err(EvalError::ZeroPathLength);
    }
    let (est, truth) = run.pairs.last().unwrap();
    Ok(100.0 * (est.pose.trans - truth.pose.trans).norm() / dist)
}

/// A NEES time series with its two-sided concentration band.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NeesSeries {
    pub t: Vec<f64>,
    pub values: Vec<f64>,
    /// Error dimension per sample (3 for position).
    pub dof: usize,
    /// Number of Monte-Carlo runs averaged into `values`.
    pub n_runs: usize,
    /// Lower edge of the two-sided 95% band (already divided by `n_runs`).
    pub lower: f64,
    /// Upper edge of the two-sided 95% band (already divided by `n_runs`).
    pub upper: f64,
    pub fraction_inside: f64,
}

/// Two-sided chi-squared concentration band for an `n_runs`-averaged NEES
/// with `dof` degrees of freedom per run: `[χ²_{n·dof}((1−p)/2),
/// χ²_{n·dof}((1+p)/2)] / n`.
pub fn nees_bounds(dof: usize, n_runs: usize, prob: f64) -> (f64, f64) {
    assert!(dof > 0 && n_runs > 0 && (0.0..1.0).contains(&prob));
    let k = (dof * n_runs) as f64;
    let dist = ChiSquared::new(k).expect("valid dof");
    let alpha = 1.0 - prob;
    (
        dist.inverse_cdf(0.5 * alpha) / n_runs as f64,
        dist.inverse_cdf(1.0 - 0.5 * alpha) / n_runs as f64,
    )
}

fn fraction_inside(values: &[f64], lower: f64, upper: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let inside = values.iter().filter(|&&v| v >= lower && v <= upper).count();
    inside as f64 / values.len() as f64
}

/// Position NEES `eᵀ Σ⁻¹ e` per snapshot (dof 3), with the single-run
/// two-sided 95% band.
pub fn nees_position(run: &AlignedRun) -> Result<NeesSeries, EvalError> {
    if run.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let mut t = Vec::with_capacity(run.len());
    let mut values = Vec::with_capacity(run.len());
    for (est, truth) in &run.pairs {
        let cov = est.pose_cov_or_err()?;
        let e = est.pose.trans - truth.pose.trans;
        let chol = cov.cholesky().ok_or(EvalError::SingularCovariance(est.t))?;
        values.push(e.dot(&chol.solve(&e)));
        t.push(est.t);
    }
    let (lower, upper) = nees_bounds(3, 1, 0.95);
    let fraction = fraction_inside(&values, lower, upper);
    Ok(NeesSeries {
        t,
        values,
        dof: 3,
        n_runs: 1,
        lower,
        upper,
        fraction_inside: fraction,
    })
}

impl Snapshot {
    fn pose_cov_or_err(&self) -> Result<Matrix3<f64>, EvalError> {
        self.pos_cov.ok_or(EvalError::MissingCovariance)
    }
}

/// Pointwise average of per-run NEES series, with the band tightened for the
/// run count.
pub fn average_nees(runs: &[NeesSeries]) -> Result<NeesSeries, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    let n = runs.len();
    let len = runs[0].values.len();
    let dof = runs[0].dof;
    for s in runs {
        if s.values.len() != len || s.dof != dof {
            return Err(EvalError::MismatchedRuns(
                "NEES series differ in length or dof".into(),
            ));
        }
    }
    let mut values = vec![0.0; len];
    for s in runs {
        for (acc, v) in values.iter_mut().zip(&s.values) {
            *acc += v;
        }
    }
    for v in &mut values {
        *v /= n as f64;
    }
    let (lower, upper) = nees_bounds(dof, n, 0.95);
    let fraction = fraction_inside(&values, lower, upper);
    Ok(NeesSeries {
        t: runs[0].t.clone(),
        values,
        dof,
        n_runs: n,
        lower,
        upper,
        fraction_inside: fraction,
    })
}

/// The full per-run metric set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    /// ‖MAE‖ of position [m].
    pub mae_position: f64,
    /// ‖RMSE‖ of position [m].
    pub rmse_position: f64,
    /// ‖RMSE‖ of attitude [deg].
    pub rmse_attitude_deg: f64,
    /// Final drift [%] of traveled distance.
    pub final_drift_pct: f64,
    /// Ground-truth traveled distance [m].
    pub traveled_distance: f64,
    /// Present when the back-end reported position covariance.
    pub nees: Option<NeesSeries>,
}

pub fn metrics_report(run: &AlignedRun) -> Result<MetricsReport, EvalError> {
    let nees = if run.pairs.iter().all(|(s, _)| s.pos_cov.is_some()) {
        Some(nees_position(run)?)
    } else {
        None
    };
    Ok(MetricsReport {
        mae_position: mae_norm(run)?,
        rmse_position: rmse_position_norm(run)?,
        rmse_attitude_deg: rmse_attitude_deg(run)?,
        final_drift_pct: final_drift_pct(run)?,
        traveled_distance: path_length(run.pairs.iter().map(|(_, t)| t.pose.trans)),
        nees,
    })
}

/// One dataset's paired position ‖RMSE‖ under both back-ends.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub index: usize,
    pub rmse_ekf: f64,
    pub rmse_fg: f64,
}

/// Paired back-end comparison: per-dataset rows plus column moments.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BackendComparison {
    pub rows: Vec<ComparisonRow>,
    pub mean_ekf: f64,
    pub mean_fg: f64,
    /// Sample standard deviations (0 with fewer than two rows).
    pub std_ekf: f64,
    pub std_fg: f64,
}

fn mean_and_sample_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = if xs.len() < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}

/// Pairs run `i` of each back-end (both must come from the same dataset and
/// front-end configuration) and tabulates position ‖RMSE‖.
pub fn compare_backends(
    runs_ekf: &[AlignedRun],
    runs_fg: &[AlignedRun],
) -> Result<BackendComparison, EvalError> {
    if runs_ekf.is_empty() || runs_ekf.len() != runs_fg.len() {
        return Err(EvalError::MismatchedRuns(format!(
            "{} EKF runs vs {} graph runs",
            runs_ekf.len(),
            runs_fg.len()
        )));
    }
    let mut rows = Vec::with_capacity(runs_ekf.len());
    for (i, (a, b)) in runs_ekf.iter().zip(runs_fg).enumerate() {
        rows.push(ComparisonRow {
            index: i,
            rmse_ekf: rmse_position_norm(a)?,
            rmse_fg: rmse_position_norm(b)?,
        });
    }
    let (mean_ekf, std_ekf) = mean_and_sample_std(&rows.iter().map(|r| r.rmse_ekf).collect::<Vec<_>>());
    let (mean_fg, std_fg) = mean_and_sample_std(&rows.iter().map(|r| r.rmse_fg).collect::<Vec<_>>());
    Ok(BackendComparison {
        rows,
        mean_ekf,
        mean_fg,
        std_ekf,
        std_fg,
    })
}
