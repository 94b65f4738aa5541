//! Multistart BFGS ascent.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// A smooth scalar function to be maximized.
///
/// Implementors provide the value; the gradient defaults to central
/// differences with step `1e-6 · (1 + |θ_k|)`.
pub trait Objective: Sync {
    fn value(&self, theta: &[f64]) -> f64;

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        central_difference_gradient(|t| self.value(t), theta)
    }

    fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        (self.value(theta), self.gradient(theta))
    }
}

/// Wraps a closure as an [`Objective`] with numerical gradients.
pub struct FnObjective<F>(pub F);

impl<F> Objective for FnObjective<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn value(&self, theta: &[f64]) -> f64 {
        (self.0)(theta)
    }
}

pub fn central_difference_gradient(f: impl Fn(&[f64]) -> f64, theta: &[f64]) -> Vec<f64> {
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|k| {
            let step = 1e-6 * (1.0 + theta[k].abs());
            probe[k] = theta[k] + step;
            let up = f(&probe);
            probe[k] = theta[k] - step;
            let down = f(&probe);
            probe[k] = theta[k];
            (up - down) / (2.0 * step)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerOptions {
    /// Convergence threshold on the sup-norm of the gradient.
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            gradient_tolerance: 1e-6,
            max_iterations: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerReport {
    pub argmax: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Index into the start list of the run that produced this report.
    pub start_index: usize,
}

fn sup_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Single BFGS run from `start`, ascending `objective`.
pub fn bfgs_ascent<O: Objective + ?Sized>(
    objective: &O,
    start: &[f64],
    options: &OptimizerOptions,
    start_index: usize,
) -> OptimizerReport {
    let n = start.len();
    let mut theta = DVector::from_column_slice(start);
    let (f0, g0) = objective.value_and_gradient(start);
    let mut evaluations = 1;
    // minimize the negated objective
    let mut f = -f0;
    let mut g = -DVector::from_vec(g0);
    let report = |theta: &DVector<f64>, f: f64, g: &DVector<f64>, iterations, evaluations, converged| {
        OptimizerReport {
            argmax: theta.as_slice().to_vec(),
            value: -f,
            gradient_norm: sup_norm(g.as_slice()),
            iterations,
            evaluations,
            converged,
            start_index,
        }
    };
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return report(&theta, f, &g, 0, evaluations, false);
    }
    if n == 0 {
        return report(&theta, f, &g, 0, evaluations, true);
    }

    let mut inv_hessian = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    for iteration in 0..options.max_iterations {
        if sup_norm(g.as_slice()) <= options.gradient_tolerance {
            return report(&theta, f, &g, iteration, evaluations, true);
        }
        let mut direction = -(&inv_hessian * &g);
        let mut slope = direction.dot(&g);
        if !(slope < 0.0) {
            inv_hessian.fill_with_identity();
            fresh = true;
            direction = -g.clone();
            slope = direction.dot(&g);
        }
        let mut step = if fresh {
            (1.0 / g.norm()).min(1.0)
        } else {
            1.0
        };

        // backtracking Armijo search
        let mut accepted = None;
        for _ in 0..60 {
            let candidate = &theta + step * &direction;
            let value = -objective.value(candidate.as_slice());
            evaluations += 1;
            if value.is_finite() && value <= f + 1e-4 * step * slope {
                accepted = Some((candidate, value));
                break;
            }
            step *= 0.5;
        }

        let Some((candidate, _)) = accepted else {
            if fresh {
                return report(&theta, f, &g, iteration, evaluations, false);
            }
            inv_hessian.fill_with_identity();
            fresh = true;
            continue;
        };

        let (value, grad) = objective.value_and_gradient(candidate.as_slice());
        evaluations += 1;
        let grad = -DVector::from_vec(grad);
        if !value.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return report(&theta, f, &g, iteration, evaluations, false);
        }
        let s = &candidate - &theta;
        let y = &grad - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                // Shanno-Phua scaling of the initial inverse Hessian
                inv_hessian *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &inv_hessian * &y;
            let yhy = y.dot(&hy);
            inv_hessian += (rho * rho * yhy + rho) * (&s * s.transpose())
                - rho * (&hy * s.transpose() + &s * hy.transpose());
            fresh = false;
        }
        theta = candidate;
        f = -value;
        g = grad;
    }
    let converged = sup_norm(g.as_slice()) <= options.gradient_tolerance;
    report(&theta, f, &g, options.max_iterations, evaluations, converged)
}

/// Runs BFGS from every start and returns the best converged run.
///
/// Starts are processed in parallel; the winner is chosen by value with
/// ties broken by the lower start index, so the result does not depend on
/// scheduling.
pub fn maximize<O: Objective>(
    objective: &O,
    starts: &[Vec<f64>],
    options: &OptimizerOptions,
) -> Result<OptimizerReport> {
    if starts.is_empty() {
        return Err(Error::invalid("maximize needs at least one start"));
    }
    let runs: Vec<OptimizerReport> = starts
        .par_iter()
        .enumerate()
        .map(|(i, s)| bfgs_ascent(objective, s, options, i))
        .collect();
    select_winner(runs)
}

/// Sequential variant of [`maximize`], used when the objective itself
/// parallelizes internally.
pub fn maximize_sequential<O: Objective + ?Sized>(
    objective: &O,
    starts: &[Vec<f64>],
    options: &OptimizerOptions,
) -> Result<OptimizerReport> {
    if starts.is_empty() {
        return Err(Error::invalid("maximize needs at least one start"));
    }
    let runs = starts
        .iter()
        .enumerate()
        .map(|(i, s)| bfgs_ascent(objective, s, options, i))
        .collect();
    select_winner(runs)
}

fn better(a: &OptimizerReport, b: &OptimizerReport) -> bool {
    a.value > b.value || (a.value == b.value && a.start_index < b.start_index)
}

fn select_winner(runs: Vec<OptimizerReport>) -> Result<OptimizerReport> {
    let mut best_converged: Option<OptimizerReport> = None;
    let mut best_any: Option<OptimizerReport> = None;
    for run in runs {
        if run.converged && best_converged.as_ref().is_none_or(|b| better(&run, b)) {
            best_converged = Some(run.clone());
        }
        if best_any.is_none() || (run.value.is_finite() && better(&run, best_any.as_ref().unwrap())) {
            best_any = Some(run);
        }
    }
    match best_converged {
        Some(r) => Ok(r),
        None => {
            let report = best_any.expect("at least one run");
            Err(Error::OptimizationFailure {
                message: format!(
                    "no start converged (best gradient norm {:.3e} after {} iterations)",
                    report.gradient_norm, report.iterations
                ),
                report: Box::new(report),
            })
        }
    }
}
