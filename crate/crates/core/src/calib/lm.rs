//! Levenberg–Marquardt with multiplicative diagonal damping.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::problem::Problem;

/// Damping above this means no step can reduce the cost.
const MAX_DAMPING: f64 = 1e16;
const MIN_DAMPING: f64 = 1e-15;

/// A least-squares objective over a flat parameter vector.
pub trait LeastSquares {
    fn residuals(&self, x: &[f64]) -> Vec<f64>;
    /// `(JᵀJ, Jᵀr)` at `x`, where `r = residuals(x)`.
    fn normal_equations(&self, x: &[f64], r: &[f64]) -> (DMatrix<f64>, DVector<f64>);
    /// Maps an updated vector back to canonical parameters.
    fn retract(&self, _x: &mut [f64]) {}
}

impl LeastSquares for Problem {
    fn residuals(&self, x: &[f64]) -> Vec<f64> {
        Problem::residuals(self, x)
    }

    fn normal_equations(&self, x: &[f64], r: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        Problem::normal_equations(self, x, r)
    }

    fn retract(&self, x: &mut [f64]) {
        self.canonicalize(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmOptions {
    pub max_iters: usize,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub cost_tol: f64,
    /// Stop when the largest step component is below this.
    pub step_tol: f64,
    pub initial_damping: f64,
    /// Damping is divided by this on accept and multiplied on reject.
    pub damping_factor: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iters: 200,
            cost_tol: 1e-10,
            step_tol: 1e-10,
            initial_damping: 1e-3,
            damping_factor: 10.0,
        }
    }
}

impl LmOptions {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_iters == 0 {
            return Err("max_iters must be at least 1".into());
        }
        for (name, v) in [("cost_tol", self.cost_tol), ("step_tol", self.step_tol)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be non-negative and finite"));
            }
        }
        if !(self.initial_damping > 0.0 && self.initial_damping.is_finite()) {
            return Err("initial_damping must be positive".into());
        }
        if !(self.damping_factor > 1.0 && self.damping_factor.is_finite()) {
            return Err("damping_factor must be greater than 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIterations,
    /// The damped normal equations stayed singular; some parameters are not
    /// constrained by the data.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    pub x: Vec<f64>,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Outer iterations (Jacobian evaluations).
    pub iterations: usize,
    /// Cost after every accepted step, starting with the initial cost.
    pub accepted_costs: Vec<f64>,
    pub status: Status,
}

fn sq_norm(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Minimizes `‖r(x)‖²` from `x0`.
pub fn solve<P: LeastSquares + ?Sized>(problem: &P, x0: &[f64], opts: &LmOptions) -> LmReport {
    let mut x = x0.to_vec();
    let mut r = problem.residuals(&x);
    let mut cost = sq_norm(&r);
    let initial_cost = cost;
    let mut accepted = vec![cost];
    let mut lambda = opts.initial_damping;
    let mut iterations = 0;
    let mut status = Status::MaxIterations;
    'outer: while iterations < opts.max_iters {
        iterations += 1;
        if x.is_empty() || cost == 0.0 {
            status = Status::Converged;
            break;
        }
        let (h, g) = problem.normal_equations(&x, &r);
        if g.amax() == 0.0 {
            status = Status::Converged;
            break;
        }
        loop {
            let mut a = h.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * h[(i, i)];
            }
            let Some(chol) = a.cholesky() else {
                lambda *= opts.damping_factor;
                if lambda > MAX_DAMPING {
                    status = Status::Degenerate;
                    break 'outer;
                }
                continue;
            };
            let delta = chol.solve(&(-&g));
            if !delta.iter().all(|v| v.is_finite()) {
                status = Status::Degenerate;
                break 'outer;
            }
            if delta.amax() < opts.step_tol {
                status = Status::Converged;
                break 'outer;
            }
            let mut x_new: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            problem.retract(&mut x_new);
            let r_new = problem.residuals(&x_new);
            let cost_new = sq_norm(&r_new);
            if cost_new <= cost {
                let relative = (cost - cost_new) / cost;
                x = x_new;
                r = r_new;
                cost = cost_new;
                accepted.push(cost);
                lambda = (lambda / opts.damping_factor).max(MIN_DAMPING);
                if relative < opts.cost_tol {
                    status = Status::Converged;
                    break 'outer;
                }
                break;
            }
            lambda *= opts.damping_factor;
            if lambda > MAX_DAMPING {
                // no descent even for a vanishing step: a minimum up to rounding
                status = Status::Converged;
                break 'outer;
            }
        }
    }
    LmReport {
        x,
        initial_cost,
        final_cost: cost,
        iterations,
        accepted_costs: accepted,
        status,
    }
}
