//! The factor abstraction, the DCS robust kernel, and the marginal prior.
//!
//! A factor owns its measurement and knows which variables it constrains; at
//! linearization it hands the solver a whitened residual and one Jacobian
//! block per constrained variable. Robustified factors fold their
//! dynamic-covariance-scaling weight into both, which makes the assembled
//! gradient exactly the gradient of the robust cost (the classic
//! iteratively-reweighted correspondence).

use nalgebra::{DMatrix, DVector};

use super::variables::{Values, VarKey, VarValue};
use super::FgError;

/// Whitened linearization of one factor: `residual` and one Jacobian block
/// per entry of `keys()`, in the same order.
#[derive(Clone, Debug)]
pub struct FactorLin {
    pub residual: DVector<f64>,
    pub blocks: Vec<DMatrix<f64>>,
}

/// One probabilistic constraint over a subset of the variables.
pub trait Factor {
    fn keys(&self) -> &[VarKey];

    /// Whitened residual and per-variable Jacobian blocks at `values`.
    fn linearize(&self, values: &Values) -> Result<FactorLin, FgError>;

    /// Cost contribution at `values`; `½‖r‖²` for plain factors, the robust
    /// kernel value for down-weighted ones.
    fn cost(&self, values: &Values) -> Result<f64, FgError>;
}

/// Dynamic covariance scaling weight `s = min(1, 2Φ/(Φ + r²))`.
///
/// Inliers (`r² ≤ Φ`) are untouched; the factor's information contribution
/// is scaled by `s²` (residual and Jacobian each by `s`).
pub fn dcs_weight(residual_sq: f64, phi: f64) -> f64 {
    assert!(phi > 0.0, "DCS kernel parameter must be positive");
    (2.0 * phi / (phi + residual_sq)).min(1.0)
}

/// Robust cost kernel matching `dcs_weight`: `ρ(r²)` with `ρ' = s²`.
///
/// Quadratic inside `Φ`, saturating at `3Φ` — so the reweighted gradient is
/// the exact gradient of the cost this function reports.
pub fn dcs_cost(residual_sq: f64, phi: f64) -> f64 {
    assert!(phi > 0.0, "DCS kernel parameter must be positive");
    if residual_sq <= phi {
        residual_sq
    } else {
        3.0 * phi - 4.0 * phi * phi / (phi + residual_sq)
    }
}

/// Vector-space factor `r = (Σ Aₖ xₖ − z)/σ` over `Gen` variables.
///
/// This is the workhorse of the linear-Gaussian reference problems that
/// validate the solver and marginalization pipeline against closed-form
/// baselines; the radar/IMU factors live in their own modules.
#[derive(Clone, Debug)]
pub struct LinearFactor {
    pub keys: Vec<VarKey>,
    pub a: Vec<DMatrix<f64>>,
    pub z: DVector<f64>,
    pub sigma: f64,
}

impl LinearFactor {
    fn residual(&self, values: &Values) -> Result<DVector<f64>, FgError> {
        let mut r = -self.z.clone();
        for (key, a) in self.keys.iter().zip(&self.a) {
            let VarValue::Gen(x) = values.get(key).ok_or(FgError::UnknownVariable(*key))? else {
                panic!("linear factors take Gen variables");
            };
            r += a * x;
        }
        Ok(r / self.sigma)
    }
}

impl Factor for LinearFactor {
    fn keys(&self) -> &[VarKey] {
        &self.keys
    }

    fn linearize(&self, values: &Values) -> Result<FactorLin, FgError> {
        Ok(FactorLin {
            residual: self.residual(values)?,
            blocks: self.a.iter().map(|a| a / self.sigma).collect(),
        })
    }

    fn cost(&self, values: &Values) -> Result<f64, FgError> {
        Ok(0.5 * self.residual(values)?.norm_squared())
    }
}

/// Quadratic prior `½δᵀHδ + bᵀδ` on deviations `δ = x ⊟ frozen` from frozen
/// linearization values — the carrier of marginalized information.
#[derive(Clone, Debug)]
pub struct MarginalPrior {
    pub keys: Vec<VarKey>,
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    pub frozen: Values,
}

impl MarginalPrior {
    /// Diagonal prior over a single variable (the bootstrap anchor).
    pub fn isotropic_blocks(key: VarKey, value: VarValue, sigmas: &[f64]) -> Self {
        let dim = value.dim();
        assert_eq!(
            dim,
            3 * sigmas.len(),
            "one sigma per 3-dof block of the variable"
        );
        let mut h = DMatrix::zeros(dim, dim);
        for (bi, s) in sigmas.iter().enumerate() {
            assert!(*s > 0.0, "prior sigma must be positive");
            let w = 1.0 / (s * s);
            for k in 0..3 {
                h[(3 * bi + k, 3 * bi + k)] = w;
            }
        }
        let mut frozen = Values::new();
        frozen.insert(key, value);
        MarginalPrior {
            keys: vec![key],
            h,
            b: DVector::zeros(dim),
            frozen,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn touches(&self, key: &VarKey) -> bool {
        self.keys.contains(key)
    }

    /// Stacked deviation of `values` from the frozen linearization values.
    pub fn delta(&self, values: &Values) -> Result<DVector<f64>, FgError> {
        let mut delta = DVector::zeros(self.dim());
        let mut at = 0;
        for key in &self.keys {
            let frozen = self.frozen.get(key).expect("frozen value for every key");
            let current = values.get(key).ok_or(FgError::UnknownVariable(*key))?;
            let d = current.boxminus(frozen);
            delta.rows_mut(at, d.len()).copy_from(&d);
            at += d.len();
        }
        Ok(delta)
    }

    pub fn cost(&self, values: &Values) -> Result<f64, FgError> {
        let delta = self.delta(values)?;
        Ok(0.5 * delta.dot(&(&self.h * &delta)) + self.b.dot(&delta))
    }

    /// Adds `H` and the gradient `Hδ + b` into the stacked system.
    pub fn accumulate(
        &self,
        values: &Values,
        h: &mut DMatrix<f64>,
        g: &mut DVector<f64>,
    ) -> Result<(), FgError> {
        let delta = self.delta(values)?;
        let grad = &self.h * &delta + &self.b;
        let mut offsets = Vec::with_capacity(self.keys.len());
        let mut at = 0;
        for key in &self.keys {
            let dim = self.frozen.get(key).expect("frozen value").dim();
            let off = values
                .offset_of(key)
                .ok_or(FgError::UnknownVariable(*key))?;
            offsets.push((at, off, dim));
            at += dim;
        }
        for &(ra, ro, rd) in &offsets {
            for &(ca, co, cd) in &offsets {
                for i in 0..rd {
                    for j in 0..cd {
                        h[(ro + i, co + j)] += self.h[(ra + i, ca + j)];
                    }
                }
            }
            for i in 0..rd {
                g[ro + i] += grad[ra + i];
            }
        }
        Ok(())
    }
}
