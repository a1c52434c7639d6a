//! Levenberg-Marquardt over a [`FactorGraph`].
//!
//! Each iteration solves the damped normal equations
//! `(JᵀJ + λ·diag(JᵀJ)) δ = -Jᵀr` with a sparse Cholesky factorization.
//! Variables are ordered poses first, quadrics last, so the factor of the
//! pose block stays banded and fill-in is confined to the quadric border.

use nalgebra::DVector;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{FactorGraph, SparseJacobian, Values};

/// Damping above which a rejected step is reported as a stall.
const MAX_LAMBDA: f64 = 1e16;
const MIN_LAMBDA: f64 = 1e-15;
const MIN_PIVOT: f64 = 1e-7;
/// Columns whose curvature is this small relative to the largest one carry
/// only round-off and are held fixed for the step.
const NULL_COLUMN_RATIO: f64 = 1e-20;
/// A small relative decrease only signals convergence when the accepted
/// step was not throttled by heavy damping.
const CONVERGED_LAMBDA: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub initial_lambda: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub rel_cost_tol: f64,
    pub grad_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_lambda: 1e-4,
            lambda_up: 10.0,
            lambda_down: 0.1,
            rel_cost_tol: 1e-8,
            grad_tol: 1e-10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("max-iterations", "must be positive"));
        }
        if !(self.initial_lambda.is_finite() && self.initial_lambda > 0.0) {
            return Err(Error::invalid("initial-lambda", "must be positive"));
        }
        if !(self.lambda_up.is_finite() && self.lambda_up > 1.0) {
            return Err(Error::invalid("lambda-up", "must be greater than 1"));
        }
        if !(self.lambda_down > 0.0 && self.lambda_down < 1.0) {
            return Err(Error::invalid("lambda-down", "must lie in (0, 1)"));
        }
        if !(self.rel_cost_tol.is_finite() && self.rel_cost_tol > 0.0) {
            return Err(Error::invalid("rel-cost-tol", "must be positive"));
        }
        if !(self.grad_tol.is_finite() && self.grad_tol > 0.0) {
            return Err(Error::invalid("grad-tol", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    CostTol,
    GradTol,
    MaxIters,
    Stalled,
}

impl TerminationReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminationReason::CostTol => "cost-tol",
            TerminationReason::GradTol => "grad-tol",
            TerminationReason::MaxIters => "max-iters",
            TerminationReason::Stalled => "stalled",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Number of accepted steps.
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub converged: bool,
    pub termination_reason: TerminationReason,
}

/// Builds `JᵀJ` as a symmetric CSC matrix.
pub fn normal_matrix(j: &SparseJacobian) -> CscMatrix<f64> {
    let mut coo = CooMatrix::new(j.ncols, j.ncols);
    // explicit diagonal so that unconstrained columns can be pinned later
    for i in 0..j.ncols {
        coo.push(i, i, 0.0);
    }
    for (r, c, v) in j.normal_triplets() {
        coo.push(r, c, v);
    }
    CscMatrix::from(&coo)
}

/// Solves `(JᵀJ + λ·diag(JᵀJ)) δ = -Jᵀr`.
pub fn linear_step(j: &SparseJacobian, r: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda", "must be non-negative"));
    }
    let h = normal_matrix(j);
    let g = j.transpose_mul(r);
    damped_solve(h, &g, lambda, false)
}

/// With `pin_null_columns`, columns without curvature get a zero step
/// instead of failing the factorization.
fn damped_solve(mut h: CscMatrix<f64>, g: &DVector<f64>, lambda: f64, pin_null_columns: bool) -> Result<DVector<f64>> {
    let n = g.len();
    let mut diag = vec![0.0; n];
    for (r, c, v) in h.triplet_iter() {
        if r == c {
            diag[r] += *v;
        }
    }
    // Jacobi scaling keeps the factorization well conditioned when the
    // whitened factors differ by many orders of magnitude.
    let max_diag = diag.iter().copied().fold(0.0, f64::max);
    let mut scale = vec![0.0; n];
    for i in 0..n {
        let d = diag[i] * (1.0 + lambda);
        let null = !(d > 0.0) || diag[i] <= NULL_COLUMN_RATIO * max_diag;
        if !(d.is_finite() && d >= 0.0) || (null && !pin_null_columns) {
            return Err(Error::SingularSystem);
        }
        if !null {
            scale[i] = 1.0 / d.sqrt();
        }
    }
    for (r, c, v) in h.triplet_iter_mut() {
        if r == c {
            *v *= 1.0 + lambda;
        }
        *v *= scale[r] * scale[c];
        if r == c && scale[r] == 0.0 {
            *v = 1.0;
        }
    }
    let chol = CscCholesky::factor(&h).map_err(|_| Error::SingularSystem)?;
    // The scaled matrix has a unit diagonal, so a vanishing pivot means the
    // system is numerically rank deficient.
    let min_pivot = chol
        .l()
        .triplet_iter()
        .filter(|(r, c, _)| r == c)
        .map(|(_, _, v)| v.abs())
        .fold(f64::INFINITY, f64::min);
    if !(min_pivot > MIN_PIVOT) {
        return Err(Error::SingularSystem);
    }
    let rhs = DVector::from_iterator(n, g.iter().zip(&scale).map(|(gi, s)| -gi * s));
    let y = chol.solve(&rhs);
    let delta = DVector::from_iterator(n, y.column(0).iter().zip(&scale).map(|(yi, s)| yi * s));
    if !delta.iter().all(|d| d.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(delta)
}

/// Which variables a solve may move.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FreeVariables {
    #[default]
    All,
    /// Poses stay at their current values.
    QuadricsOnly,
}

/// Minimizes the whitened cost of `graph` starting from its current values.
pub fn solve(graph: &FactorGraph, config: &SolverConfig) -> Result<(Values, SolveReport)> {
    solve_with(graph, config, FreeVariables::All)
}

/// [`solve`] restricted to a subset of the variables.
pub fn solve_with(graph: &FactorGraph, config: &SolverConfig, free: FreeVariables) -> Result<(Values, SolveReport)> {
    config.validate()?;
    graph.validate()?;
    let mut values = graph.values().clone();
    let mut res = graph.residual_at(&values)?;
    let initial_cost = res.cost;
    let mut lambda = config.initial_lambda;
    let mut iterations = 0;
    let mut reason = TerminationReason::MaxIters;

    if !initial_cost.is_finite() {
        return Err(Error::InvalidGraph("initial cost is not finite".into()));
    }

    'outer: while iterations < config.max_iterations {
        if res.cost == 0.0 {
            reason = TerminationReason::CostTol;
            break;
        }
        let first = match free {
            FreeVariables::All => 0,
            FreeVariables::QuadricsOnly => values.quadric_column(0),
        };
        let mut jac = graph.jacobian_at(&values)?;
        if first > 0 {
            jac = jac.columns_from(first);
        }
        if jac.ncols == 0 {
            reason = TerminationReason::GradTol;
            break;
        }
        let g = jac.transpose_mul(&res.values);
        if g.amax() < config.grad_tol {
            reason = TerminationReason::GradTol;
            break;
        }
        let h = normal_matrix(&jac);
        loop {
            let step = damped_solve(h.clone(), &g, lambda, true);
            let accepted = match step {
                Ok(step) => {
                    let mut delta = DVector::zeros(values.dim());
                    delta.rows_mut(first, step.len()).copy_from(&step);
                    let candidate = graph.retract(&values, &delta);
                    let cand = graph.residual_at(&candidate)?;
                    if cand.cost.is_finite() && cand.cost <= res.cost {
                        let decrease = res.cost - cand.cost;
                        let small_step = delta.amax() <= 1e-12 * (1.0 + state_scale(&values));
                        let flat = decrease <= config.rel_cost_tol * (res.cost + decrease) && lambda <= CONVERGED_LAMBDA;
                        values = candidate;
                        res = cand;
                        iterations += 1;
                        lambda = (lambda * config.lambda_down).max(MIN_LAMBDA);
                        if flat || small_step {
                            reason = TerminationReason::CostTol;
                            break 'outer;
                        }
                        true
                    } else {
                        false
                    }
                }
                Err(_) => false,
            };
            if accepted {
                break;
            }
            lambda *= config.lambda_up;
            if lambda > MAX_LAMBDA {
                reason = TerminationReason::Stalled;
                break 'outer;
            }
        }
    }

    let converged = matches!(reason, TerminationReason::CostTol | TerminationReason::GradTol);
    Ok((
        values,
        SolveReport {
            iterations,
            initial_cost,
            final_cost: res.cost,
            converged,
            termination_reason: reason,
        },
    ))
}

fn state_scale(values: &Values) -> f64 {
    let p = values
        .poses
        .iter()
        .map(|p| p.x.abs().max(p.y.abs()).max(p.theta.abs()))
        .fold(0.0, f64::max);
    let q = values.quadrics.iter().map(|q| q.vector().amax()).fold(0.0, f64::max);
    p.max(q)
}
