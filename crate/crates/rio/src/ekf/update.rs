//! Update machinery: chi-squared gating, stacked Joseph-form EKF updates,
//! and the 3-point RANSAC ego-velocity fit used to prune Doppler outliers.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::state::FilterState;
use super::ClassReport;

/// Chi-squared quantile `χ²_dof(percentile)`.
pub fn chi2_threshold(dof: usize, percentile: f64) -> f64 {
    ChiSquared::new(dof as f64)
        .expect("dof > 0")
        .inverse_cdf(percentile)
}

/// Outcome of a chi-squared innovation gate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GateOutcome {
    Accepted { stat: f64, threshold: f64 },
    Rejected { stat: f64, threshold: f64 },
    /// The innovation covariance was not positive definite; the measurement
    /// is rejected and the condition reported.
    SingularS,
}

impl GateOutcome {
    pub fn accepted(&self) -> bool {
        matches!(self, GateOutcome::Accepted { .. })
    }

    pub fn stat(&self) -> Option<f64> {
        match self {
            GateOutcome::Accepted { stat, .. } | GateOutcome::Rejected { stat, .. } => Some(*stat),
            GateOutcome::SingularS => None,
        }
    }
}

/// Gates a residual with innovation covariance `S`: accept iff
/// `rᵀ S⁻¹ r ≤ χ²_dof(percentile)`.
pub fn chi2_gate(residual: &DVector<f64>, s: &DMatrix<f64>, dof: usize, percentile: f64) -> GateOutcome {
    let threshold = chi2_threshold(dof, percentile);
    match s.clone().cholesky() {
        Some(chol) => {
            let x = chol.solve(residual);
            let stat = residual.dot(&x);
            if !stat.is_finite() {
                GateOutcome::SingularS
            } else if stat <= threshold {
                GateOutcome::Accepted { stat, threshold }
            } else {
                GateOutcome::Rejected { stat, threshold }
            }
        }
        None => GateOutcome::SingularS,
    }
}

/// Scalar fast path of [`chi2_gate`].
pub fn chi2_gate_scalar(residual: f64, s: f64, percentile: f64) -> GateOutcome {
    if !(s > 0.0 && s.is_finite()) {
        return GateOutcome::SingularS;
    }
    let threshold = chi2_threshold(1, percentile);
    let stat = residual * residual / s;
    if stat <= threshold {
        GateOutcome::Accepted { stat, threshold }
    } else {
        GateOutcome::Rejected { stat, threshold }
    }
}

/// Accumulates gated scalar residual rows of one measurement class and
/// applies them as a single stacked Joseph-form update.
pub struct StackedUpdate {
    dim: usize,
    rows: Vec<DVector<f64>>,
    residuals: Vec<f64>,
    variances: Vec<f64>,
}

impl StackedUpdate {
    pub fn new(dim: usize) -> Self {
        StackedUpdate {
            dim,
            rows: Vec::new(),
            residuals: Vec::new(),
            variances: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Gates one scalar row against the current covariance and stacks it when
    /// accepted; the offer is recorded in `report` either way.
    pub fn offer(
        &mut self,
        state: &FilterState,
        row: DVector<f64>,
        residual: f64,
        sigma: f64,
        percentile: f64,
        report: &mut ClassReport,
    ) {
        assert_eq!(row.len(), self.dim);
        let s = (&state.cov * &row).dot(&row) + sigma * sigma;
        let outcome = chi2_gate_scalar(residual, s, percentile);
        report.residuals.push(residual);
        report.innovation_var.push(s);
        report.chi2.push(outcome.stat().unwrap_or(f64::INFINITY));
        if outcome.accepted() {
            report.accepted += 1;
            self.rows.push(row);
            self.residuals.push(residual);
            self.variances.push(sigma * sigma);
        } else {
            report.rejected += 1;
        }
    }

    /// Applies the stacked update (Joseph form), injecting the correction
    /// into the nominal state. No-op when nothing was accepted.
    pub fn apply(self, state: &mut FilterState) -> bool {
        if self.rows.is_empty() {
            return false;
        }
        let k_rows = self.rows.len();
        let n = self.dim;
        let mut h = DMatrix::zeros(k_rows, n);
        for (i, row) in self.rows.iter().enumerate() {
            h.row_mut(i).copy_from(&row.transpose());
        }
        let r_diag = DMatrix::from_diagonal(&DVector::from_vec(self.variances.clone()));
        let residual = DVector::from_vec(self.residuals.clone());

        let s = &h * &state.cov * h.transpose() + &r_diag;
        let s_sym = (&s + s.transpose()) * 0.5;
        let Some(chol) = s_sym.cholesky() else {
            return false;
        };
        // K = Σ Hᵀ S⁻¹ via solving S Kᵀ = H Σ.
        let k_t = chol.solve(&(&h * &state.cov));
        let k = k_t.transpose();

        let delta = &k * &residual;
        let ikh = DMatrix::identity(n, n) - &k * &h;
        let new_cov = &ikh * &state.cov * ikh.transpose() + &k * &r_diag * k.transpose();
        state.cov = new_cov;
        state.symmetrize();
        state.boxplus(&delta);
        true
    }
}

/// Configuration of the 3-point RANSAC ego-velocity fit.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier threshold on the Doppler residual [m/s].
    pub threshold: f64,
    /// Base seed; the per-scan stream is derived from it and the scan index
    /// so runs are reproducible.
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            iterations: 100,
            threshold: 0.15,
            seed: 0,
        }
    }
}

/// Result of the RANSAC fit: radar-frame ego velocity of the radar origin and
/// the inlier indices.
#[derive(Clone, Debug)]
pub struct RansacFit {
    pub v_radar: Vector3<f64>,
    pub inliers: Vec<usize>,
}

/// Fits the radar-frame ego velocity from `(direction, doppler)` pairs using
/// the model `doppler_i = −r̂ᵢᵀ v`. Returns `None` for fewer than three
/// usable points (the caller skips the update and reports it).
pub fn ransac_velocity(
    dirs: &[Vector3<f64>],
    dopplers: &[f64],
    cfg: &RansacConfig,
    scan_index: u64,
) -> Option<RansacFit> {
    assert_eq!(dirs.len(), dopplers.len());
    let n = dirs.len();
    if n < 3 {
        return None;
    }
    let units: Vec<Vector3<f64>> = dirs.iter().map(|d| d / d.norm()).collect();

    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ scan_index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut best: Option<(usize, Vector3<f64>)> = None;
    for _ in 0..cfg.iterations {
        let picks = rand::seq::index::sample(&mut rng, n, 3);
        let a = Matrix3::from_rows(&[
            units[picks.index(0)].transpose(),
            units[picks.index(1)].transpose(),
            units[picks.index(2)].transpose(),
        ]);
        let b = -Vector3::new(
            dopplers[picks.index(0)],
            dopplers[picks.index(1)],
            dopplers[picks.index(2)],
        );
        let Some(v) = a.lu().solve(&b) else {
            continue;
        };
        if !v.iter().all(|x| x.is_finite()) {
            continue;
        }
        let count = units
            .iter()
            .zip(dopplers)
            .filter(|(u, &d)| (d + u.dot(&v)).abs() <= cfg.threshold)
            .count();
        if best.map_or(true, |(c, _)| count > c) {
            best = Some((count, v));
        }
    }
    let (_, v0) = best?;

    let inliers: Vec<usize> = (0..n)
        .filter(|&i| (dopplers[i] + units[i].dot(&v0)).abs() <= cfg.threshold)
        .collect();
    if inliers.len() < 3 {
        return None;
    }

    // Least-squares refit on the inlier set.
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for &i in &inliers {
        ata += units[i] * units[i].transpose();
        atb += units[i] * (-dopplers[i]);
    }
    let v_radar = ata.cholesky().map_or(v0, |c| c.solve(&atb));

    Some(RansacFit { v_radar, inliers })
}
