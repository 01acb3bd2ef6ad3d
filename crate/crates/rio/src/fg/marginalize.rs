//! Schur-complement marginalization with frozen linearization points.
//!
//! To marginalize a set of variables µ we take the sub-graph of factors (and
//! priors) touching µ, linearize it, and Schur-complement the µ block of the
//! resulting normal equations:
//!
//! `H* = H_λλ − H_λµ H_µµ⁻¹ H_µλ`,  `b* = g_λ − H_λµ H_µµ⁻¹ g_µ`
//!
//! where λ is the Markov blanket (every variable sharing a factor with µ).
//! The output is a quadratic prior over λ anchored at the linearization
//! values used here. Those values are recorded in a registry and reused by
//! every later marginalization — once a variable has been part of a prior,
//! its linearization point never changes (this preserves the nullspaces of
//! the stacked Jacobians; updating the points would feed information into
//! unobservable directions).

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};

use super::factor::{Factor, MarginalPrior};
use super::variables::{Values, VarKey, VarValue};
use super::FgError;

/// Insert-only store of frozen linearization values.
#[derive(Clone, Debug, Default)]
pub struct FrozenRegistry {
    map: BTreeMap<VarKey, VarValue>,
}

impl FrozenRegistry {
    pub fn new() -> Self {
        FrozenRegistry::default()
    }

    pub fn get(&self, key: &VarKey) -> Option<&VarValue> {
        self.map.get(key)
    }

    pub fn contains(&self, key: &VarKey) -> bool {
        self.map.contains_key(key)
    }

    /// Records a linearization value; an existing entry is never replaced.
    /// Returns true when the key was newly frozen.
    pub fn freeze(&mut self, key: VarKey, value: VarValue) -> bool {
        if self.map.contains_key(&key) {
            false
        } else {
            self.map.insert(key, value);
            true
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VarKey, &VarValue)> {
        self.map.iter()
    }
}

/// Result of one marginalization step.
pub struct Marginalized {
    /// Prior over the Markov blanket, anchored at the frozen values.
    pub prior: MarginalPrior,
    /// Indices (into the supplied factor slice) of the consumed factors.
    pub consumed_factors: Vec<usize>,
    /// Indices (into the supplied prior slice) of the consumed priors.
    pub consumed_priors: Vec<usize>,
    /// True when `H_µµ` needed diagonal regularization.
    pub regularized: bool,
}

/// Marginalizes the variables `mu` out of the sub-graph of `factors` and
/// `priors` that touch them.
///
/// Linearization happens at the registry's frozen value for variables that
/// already have one and at the current estimate otherwise; every sub-graph
/// variable is frozen afterwards. Factors and priors not touching `mu` are
/// left alone (their indices are absent from the consumed lists).
pub fn marginalize(
    factors: &[&dyn Factor],
    priors: &[&MarginalPrior],
    mu: &[VarKey],
    values: &Values,
    registry: &mut FrozenRegistry,
) -> Result<Marginalized, FgError> {
    let mu_set: BTreeSet<VarKey> = mu.iter().copied().collect();
    assert!(!mu_set.is_empty(), "marginalizing an empty set");

    let consumed_factors: Vec<usize> = factors
        .iter()
        .enumerate()
        .filter(|(_, f)| f.keys().iter().any(|k| mu_set.contains(k)))
        .map(|(i, _)| i)
        .collect();
    let consumed_priors: Vec<usize> = priors
        .iter()
        .enumerate()
        .filter(|(_, p)| p.keys.iter().any(|k| mu_set.contains(k)))
        .map(|(i, _)| i)
        .collect();

    // Sub-graph variables: µ first, then the blanket λ in key order.
    let mut vars: BTreeSet<VarKey> = BTreeSet::new();
    for &i in &consumed_factors {
        vars.extend(factors[i].keys().iter().copied());
    }
    for &i in &consumed_priors {
        vars.extend(priors[i].keys.iter().copied());
    }
    for k in &mu_set {
        assert!(
            vars.contains(k),
            "marginalized variable {k:?} has no factors"
        );
    }
    let lambda: Vec<VarKey> = vars.iter().filter(|k| !mu_set.contains(k)).copied().collect();
    let ordered: Vec<VarKey> = mu_set.iter().copied().chain(lambda.iter().copied()).collect();

    // Linearization values: frozen where available, current otherwise; all
    // sub-graph variables freeze at the value used here.
    let mut lin = Values::new();
    for key in &ordered {
        let value = match registry.get(key) {
            Some(v) => v.clone(),
            None => values
                .get(key)
                .ok_or(FgError::UnknownVariable(*key))?
                .clone(),
        };
        registry.freeze(*key, value.clone());
        lin.insert(*key, value);
    }

    // Normal equations of the sub-graph at the linearization point.
    let dim = lin.dim();
    let mut h = DMatrix::zeros(dim, dim);
    let mut g = DVector::zeros(dim);
    for &i in &consumed_factors {
        let f = factors[i];
        let flin = f.linearize(&lin)?;
        let offsets: Vec<usize> = f
            .keys()
            .iter()
            .map(|k| lin.offset_of(k).expect("sub-graph variable"))
            .collect();
        for (a, ja) in flin.blocks.iter().enumerate() {
            let ga = ja.transpose() * &flin.residual;
            for r in 0..ja.ncols() {
                g[offsets[a] + r] += ga[r];
            }
            for (b, jb) in flin.blocks.iter().enumerate() {
                let hab = ja.transpose() * jb;
                for r in 0..hab.nrows() {
                    for c in 0..hab.ncols() {
                        h[(offsets[a] + r, offsets[b] + c)] += hab[(r, c)];
                    }
                }
            }
        }
    }
    for &i in &consumed_priors {
        priors[i].accumulate(&lin, &mut h, &mut g)?;
    }
    let ht = h.transpose();
    h = (h + ht) * 0.5;

    // Schur complement of the µ block.
    let mu_dim: usize = mu_set
        .iter()
        .map(|k| lin.get(k).expect("sub-graph variable").dim())
        .sum();
    let lam_dim = dim - mu_dim;
    let h_mm = h.view((0, 0), (mu_dim, mu_dim)).into_owned();
    let h_lm = h.view((mu_dim, 0), (lam_dim, mu_dim)).into_owned();
    let h_ll = h.view((mu_dim, mu_dim), (lam_dim, lam_dim)).into_owned();
    let g_m = g.rows(0, mu_dim).into_owned();
    let g_l = g.rows(mu_dim, lam_dim).into_owned();

    let mut regularized = false;
    let chol = match h_mm.clone().cholesky() {
        Some(c) => c,
        None => {
            regularized = true;
            eprintln!(
                "warning: singular marginalization block ({mu_dim}x{mu_dim}); regularizing"
            );
            let mut damped = h_mm.clone();
            for i in 0..mu_dim {
                damped[(i, i)] += 1e-9;
            }
            damped.cholesky().ok_or(FgError::SingularSystem)?
        }
    };
    // X = H_µµ⁻¹ H_µλ and y = H_µµ⁻¹ g_µ.
    let x = chol.solve(&h_lm.transpose());
    let y = chol.solve(&g_m);

    let mut h_star = h_ll - &h_lm * &x;
    let ht = h_star.transpose();
    h_star = (h_star + ht) * 0.5;
    let b_star = g_l - &h_lm * y;

    let mut frozen = Values::new();
    for key in &lambda {
        frozen.insert(*key, lin.get(key).expect("blanket variable").clone());
    }
    let prior = MarginalPrior {
        keys: lambda,
        h: h_star,
        b: b_star,
        frozen,
    };
    Ok(Marginalized {
        prior,
        consumed_factors,
        consumed_priors,
        regularized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fg::factor::LinearFactor;
    use approx::assert_relative_eq;
    use nalgebra::{dvector, Matrix2};

    fn gen1(x: f64) -> VarValue {
        VarValue::Gen(dvector![x])
    }

    /// H = [[2,1],[1,2]], b = [1,1], marginalize the first variable:
    /// H* = 2 − 1·(1/2)·1 = 1.5 and b* = 1 − 1·(1/2)·1 = 0.5.
    #[test]
    fn two_variable_schur_complement_by_hand() {
        let mut frozen = Values::new();
        frozen.insert(VarKey::State(0), gen1(0.0));
        frozen.insert(VarKey::State(1), gen1(0.0));
        let prior = MarginalPrior {
            keys: vec![VarKey::State(0), VarKey::State(1)],
            h: DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]),
            b: dvector![1.0, 1.0],
            frozen,
        };
        let mut values = Values::new();
        values.insert(VarKey::State(0), gen1(0.0));
        values.insert(VarKey::State(1), gen1(0.0));
        let mut registry = FrozenRegistry::new();

        let out = marginalize(&[], &[&prior], &[VarKey::State(0)], &values, &mut registry).unwrap();
        assert_eq!(out.prior.keys, vec![VarKey::State(1)]);
        assert_relative_eq!(out.prior.h[(0, 0)], 1.5, epsilon = 1e-12);
        assert_relative_eq!(out.prior.b[0], 0.5, epsilon = 1e-12);
        assert_eq!(out.consumed_priors, vec![0]);
        assert!(!out.regularized);
        assert!(registry.contains(&VarKey::State(0)));
        assert!(registry.contains(&VarKey::State(1)));
    }

    /// A variable disconnected from the rest leaves untouched factors and
    /// priors alone: nothing about the remainder enters the new prior.
    #[test]
    fn disconnected_variable_leaves_remainder_prior_untouched() {
        // Factor on x0 only (µ), a separate prior on x1 (remainder).
        let f = LinearFactor {
            keys: vec![VarKey::State(0)],
            a: vec![DMatrix::from_row_slice(1, 1, &[1.0])],
            z: dvector![0.3],
            sigma: 1.0,
        };
        let mut frozen = Values::new();
        frozen.insert(VarKey::State(1), gen1(4.0));
        let remainder_prior = MarginalPrior {
            keys: vec![VarKey::State(1)],
            h: DMatrix::from_row_slice(1, 1, &[9.0]),
            b: dvector![0.0],
            frozen,
        };
        let mut values = Values::new();
        values.insert(VarKey::State(0), gen1(0.0));
        values.insert(VarKey::State(1), gen1(4.0));
        let mut registry = FrozenRegistry::new();

        let out = marginalize(
            &[&f],
            &[&remainder_prior],
            &[VarKey::State(0)],
            &values,
            &mut registry,
        )
        .unwrap();
        // The remainder prior was not consumed, and the new prior carries no
        // variables at all (empty blanket).
        assert!(out.consumed_priors.is_empty());
        assert_eq!(out.consumed_factors, vec![0]);
        assert!(out.prior.keys.is_empty());
        assert_eq!(out.prior.dim(), 0);
    }

    /// Chained marginalization must reproduce the batch solution: solve the
    /// full 2-variable system directly, then marginalize one variable and
    /// minimize the prior alone.
    #[test]
    fn marginal_of_linear_system_matches_batch_solve() {
        // Factors: x0 ~ 1 (sigma 1), x1 − x0 ~ 0.5 (sigma 0.5), x1 ~ 2 (sigma 2).
        let f0 = LinearFactor {
            keys: vec![VarKey::State(0)],
            a: vec![DMatrix::from_row_slice(1, 1, &[1.0])],
            z: dvector![1.0],
            sigma: 1.0,
        };
        let f01 = LinearFactor {
            keys: vec![VarKey::State(0), VarKey::State(1)],
            a: vec![
                DMatrix::from_row_slice(1, 1, &[-1.0]),
                DMatrix::from_row_slice(1, 1, &[1.0]),
            ],
            z: dvector![0.5],
            sigma: 0.5,
        };
        let f1 = LinearFactor {
            keys: vec![VarKey::State(1)],
            a: vec![DMatrix::from_row_slice(1, 1, &[1.0])],
            z: dvector![2.0],
            sigma: 2.0,
        };

        // Batch normal equations (linearized at 0, which is exact here).
        let mut values = Values::new();
        values.insert(VarKey::State(0), gen1(0.0));
        values.insert(VarKey::State(1), gen1(0.0));
        let h = Matrix2::new(1.0 + 4.0, -4.0, -4.0, 4.0 + 0.25);
        let g = nalgebra::Vector2::new(-1.0 + 2.0, -2.0 - 0.5);
        let batch = -h.try_inverse().unwrap() * g;

        // Marginalize x0. Only the factors touching x0 are consumed; f1
        // stays in the live graph. Minimizing the remaining system — the
        // marginal prior plus f1 — over x1 must give the batch x1.
        let mut registry = FrozenRegistry::new();
        let out = marginalize(
            &[&f0, &f01, &f1],
            &[],
            &[VarKey::State(0)],
            &values,
            &mut registry,
        )
        .unwrap();
        assert_eq!(out.consumed_factors, vec![0, 1]);
        // f1 at the linearization point 0: J = 1/2, r = (0 − 2)/2 = −1.
        let h_total = out.prior.h[(0, 0)] + 0.25;
        let g_total = out.prior.b[0] - 0.5;
        let x1 = -g_total / h_total;
        assert_relative_eq!(x1, batch[1], epsilon = 1e-12);
    }

    /// Frozen values win over current estimates in later marginalizations.
    #[test]
    fn registry_pins_linearization_values() {
        let f = LinearFactor {
            keys: vec![VarKey::State(0), VarKey::State(1)],
            a: vec![
                DMatrix::from_row_slice(1, 1, &[1.0]),
                DMatrix::from_row_slice(1, 1, &[1.0]),
            ],
            z: dvector![0.0],
            sigma: 1.0,
        };
        let mut values = Values::new();
        values.insert(VarKey::State(0), gen1(1.0));
        values.insert(VarKey::State(1), gen1(2.0));
        let mut registry = FrozenRegistry::new();
        registry.freeze(VarKey::State(1), gen1(-5.0));

        let out = marginalize(&[&f], &[], &[VarKey::State(0)], &values, &mut registry).unwrap();
        // The blanket variable was linearized at its frozen value, not at
        // the current estimate.
        let VarValue::Gen(frozen) = out.prior.frozen.get(&VarKey::State(1)).unwrap() else {
            unreachable!()
        };
        assert_eq!(frozen[0], -5.0);
        // And freezing never overwrites.
        assert!(!registry.freeze(VarKey::State(1), gen1(99.0)));
        let VarValue::Gen(still) = registry.get(&VarKey::State(1)).unwrap() else {
            unreachable!()
        };
        assert_eq!(still[0], -5.0);
    }
}
