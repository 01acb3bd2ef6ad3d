//! Graph assembly and the Levenberg–Marquardt solver.

use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::factor::{Factor, MarginalPrior};
use super::variables::Values;
use super::FgError;

/// A factor graph over one window: borrowed factors plus quadratic priors.
pub struct Graph<'a> {
    pub factors: Vec<&'a dyn Factor>,
    pub priors: Vec<&'a MarginalPrior>,
}

/// Stacked Gauss–Newton system `H δ = −g` with the cost at the
/// linearization point.
pub struct LinearSystem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub cost: f64,
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph {
            factors: Vec::new(),
            priors: Vec::new(),
        }
    }

    /// Total cost at `values`.
    pub fn cost(&self, values: &Values) -> Result<f64, FgError> {
        let mut cost = 0.0;
        for f in &self.factors {
            cost += f.cost(values)?;
        }
        for p in &self.priors {
            cost += p.cost(values)?;
        }
        Ok(cost)
    }

    /// Linearizes every factor and prior at `values` into one symmetric
    /// normal-equations system over the stacked error state.
    pub fn assemble(&self, values: &Values) -> Result<LinearSystem, FgError> {
        let dim = values.dim();
        let mut h = DMatrix::zeros(dim, dim);
        let mut g = DVector::zeros(dim);
        let mut cost = 0.0;

        for f in &self.factors {
            let lin = f.linearize(values)?;
            cost += f.cost(values)?;
            let keys = f.keys();
            assert_eq!(
                keys.len(),
                lin.blocks.len(),
                "one Jacobian block per factor key"
            );
            let offsets: Vec<usize> = keys
                .iter()
                .map(|k| values.offset_of(k).ok_or(FgError::UnknownVariable(*k)))
                .collect::<Result<_, _>>()?;
            for (a, ja) in lin.blocks.iter().enumerate() {
                let ga = ja.transpose() * &lin.residual;
                g.rows_mut(offsets[a], ja.ncols()).add_assign(&ga);
                for (b, jb) in lin.blocks.iter().enumerate() {
                    let hab = ja.transpose() * jb;
                    h.view_mut((offsets[a], offsets[b]), (ja.ncols(), jb.ncols()))
                        .add_assign(&hab);
                }
            }
        }
        for p in &self.priors {
            p.accumulate(values, &mut h, &mut g)?;
            cost += p.cost(values)?;
        }

        // Symmetrize against floating-point drift in the block sums.
        let ht = h.transpose();
        h = (h + ht) * 0.5;
        Ok(LinearSystem { h, g, cost })
    }
}

impl<'a> Default for Graph<'a> {
    fn default() -> Self {
        Graph::new()
    }
}

/// Levenberg–Marquardt settings.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub lambda_init: f64,
    /// Multiplier applied on rejection (and divided out on acceptance).
    pub lambda_factor: f64,
    pub lambda_max: f64,
    pub max_iterations: usize,
    /// Terminate when the gradient infinity-norm falls below this.
    pub gradient_tol: f64,
    /// Terminate when the relative cost decrease of an accepted step falls
    /// below this.
    pub relative_cost_tol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            lambda_init: 1e-4,
            lambda_factor: 10.0,
            lambda_max: 1e32,
            max_iterations: 50,
            gradient_tol: 1e-8,
            relative_cost_tol: 1e-10,
        }
    }
}

/// Why the solver stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    /// Gradient infinity-norm below tolerance.
    Gradient,
    /// Accepted step changed the cost by less than the relative tolerance.
    RelativeCost,
    MaxIterations,
    /// Damping grew past `lambda_max` without an acceptable step.
    LambdaOverflow,
}

/// Solve trace: the cost sequence covers the accepted iterates only and is
/// non-increasing by construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Proposed steps (accepted + rejected).
    pub iterations: usize,
    pub accepted: usize,
    pub termination: Termination,
    pub converged: bool,
    pub cost_trace: Vec<f64>,
}

/// Minimizes the graph cost from `init` by damped Gauss–Newton steps.
///
/// The damped system is `(H + λ·diag(H))δ = −g` with the diagonal clamped
/// away from zero; steps are accepted only if the true cost decreases, so the
/// accepted-cost trace is monotone. A Cholesky failure is treated like a
/// rejected step (more damping).
pub fn solve_lm(
    graph: &Graph<'_>,
    init: Values,
    cfg: &LmConfig,
) -> Result<(Values, SolveReport), FgError> {
    let mut values = init;
    let mut sys = graph.assemble(&values)?;
    let initial_cost = sys.cost;
    let mut cost_trace = vec![sys.cost];
    let mut lambda = cfg.lambda_init;
    let mut iterations = 0;
    let mut accepted = 0;

    if values.dim() == 0 || sys.g.amax() < cfg.gradient_tol {
        let report = SolveReport {
            initial_cost,
            final_cost: sys.cost,
            iterations,
            accepted,
            termination: Termination::Gradient,
            converged: true,
            cost_trace,
        };
        return Ok((values, report));
    }

    let (termination, converged) = loop {
        if iterations >= cfg.max_iterations {
            break (Termination::MaxIterations, false);
        }
        iterations += 1;

        let mut damped = sys.h.clone();
        for i in 0..damped.nrows() {
            let d = sys.h[(i, i)].abs().max(1e-12);
            damped[(i, i)] += lambda * d;
        }
        let step = match damped.cholesky() {
            Some(chol) => chol.solve(&(-&sys.g)),
            None => {
                lambda *= cfg.lambda_factor;
                if lambda > cfg.lambda_max {
                    break (Termination::LambdaOverflow, false);
                }
                continue;
            }
        };

        let candidate = values.boxplus(&step);
        let cand_cost = graph.cost(&candidate)?;
        if cand_cost.is_finite() && cand_cost < sys.cost {
            let decrease = sys.cost - cand_cost;
            let rel = decrease / sys.cost.abs().max(1e-300);
            values = candidate;
            sys = graph.assemble(&values)?;
            cost_trace.push(sys.cost);
            accepted += 1;
            lambda = (lambda / cfg.lambda_factor).max(1e-15);
            if sys.g.amax() < cfg.gradient_tol {
                break (Termination::Gradient, true);
            }
            if rel < cfg.relative_cost_tol {
                break (Termination::RelativeCost, true);
            }
        } else {
            lambda *= cfg.lambda_factor;
            if lambda > cfg.lambda_max {
                break (Termination::LambdaOverflow, false);
            }
        }
    };

    let report = SolveReport {
        initial_cost,
        final_cost: sys.cost,
        iterations,
        accepted,
        termination,
        converged,
        cost_trace,
    };
    Ok((values, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fg::factor::LinearFactor;
    use crate::fg::variables::{VarKey, VarValue};
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    #[test]
    fn linear_problem_matches_normal_equations_in_one_step() {
        // Two scalar unknowns, three measurements.
        let f1 = LinearFactor {
            keys: vec![VarKey::State(0)],
            a: vec![DMatrix::from_row_slice(1, 1, &[1.0])],
            z: dvector![1.0],
            sigma: 0.5,
        };
        let f2 = LinearFactor {
            keys: vec![VarKey::State(1)],
            a: vec![DMatrix::from_row_slice(1, 1, &[2.0])],
            z: dvector![3.0],
            sigma: 1.0,
        };
        let f3 = LinearFactor {
            keys: vec![VarKey::State(0), VarKey::State(1)],
            a: vec![
                DMatrix::from_row_slice(1, 1, &[1.0]),
                DMatrix::from_row_slice(1, 1, &[-1.0]),
            ],
            z: dvector![0.2],
            sigma: 0.25,
        };
        let mut graph = Graph::new();
        graph.factors.push(&f1);
        graph.factors.push(&f2);
        graph.factors.push(&f3);

        let mut init = Values::new();
        init.insert(VarKey::State(0), VarValue::Gen(dvector![10.0]));
        init.insert(VarKey::State(1), VarValue::Gen(dvector![-4.0]));

        let (solution, report) = solve_lm(&graph, init.clone(), &LmConfig::default()).unwrap();

        // Closed-form normal equations for the same system.
        let sys = graph.assemble(&init).unwrap();
        let dx = sys.h.clone().cholesky().unwrap().solve(&(-&sys.g));
        let direct = init.boxplus(&dx);

        let err = solution.boxminus(&direct);
        assert!(err.amax() < 1e-10, "LM vs normal equations: {err}");
        assert!(report.converged);
        // Accepted costs are monotone non-increasing.
        for w in report.cost_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn init_at_optimum_terminates_immediately() {
        let f = LinearFactor {
            keys: vec![VarKey::State(0)],
            a: vec![DMatrix::from_row_slice(1, 1, &[1.0])],
            z: dvector![2.5],
            sigma: 1.0,
        };
        let mut graph = Graph::new();
        graph.factors.push(&f);
        let mut init = Values::new();
        init.insert(VarKey::State(0), VarValue::Gen(dvector![2.5]));

        let (solution, report) = solve_lm(&graph, init, &LmConfig::default()).unwrap();
        assert!(report.converged);
        assert!(report.accepted <= 1, "no real work at the optimum");
        let VarValue::Gen(x) = solution.get(&VarKey::State(0)).unwrap() else {
            unreachable!()
        };
        assert_relative_eq!(x[0], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn rank_deficient_system_is_rescued_by_damping() {
        // One factor on x0 only, but two variables: H is singular, the
        // damped system is not; the untouched variable must not move.
        let f = LinearFactor {
            keys: vec![VarKey::State(0)],
            a: vec![DMatrix::from_row_slice(1, 1, &[1.0])],
            z: dvector![1.0],
            sigma: 1.0,
        };
        let mut graph = Graph::new();
        graph.factors.push(&f);
        let mut init = Values::new();
        init.insert(VarKey::State(0), VarValue::Gen(dvector![5.0]));
        init.insert(VarKey::State(1), VarValue::Gen(dvector![7.0]));

        let (solution, report) = solve_lm(&graph, init, &LmConfig::default()).unwrap();
        assert!(report.converged);
        let VarValue::Gen(x0) = solution.get(&VarKey::State(0)).unwrap() else {
            unreachable!()
        };
        let VarValue::Gen(x1) = solution.get(&VarKey::State(1)).unwrap() else {
            unreachable!()
        };
        assert_relative_eq!(x0[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(x1[0], 7.0, epsilon = 1e-12);
    }
}
