use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::linalg::{checked_inverse, symmetrize};
use crate::numerics::{inverse_mills, inverse_mills_derivative, log_normal_cdf, normal_cdf, OptimizerReport};

use super::{FirstStageFit, FirstStageMethod, ProbitCoefficients, SelectionSample};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbitOptions {
    /// Component rescaled to 1 for display; defaults to the first
    /// non-integer w column.
    pub normalized: Option<usize>,
    pub max_iterations: usize,
    /// Sup-norm threshold on the gradient of the mean log-likelihood.
    pub gradient_tolerance: f64,
}

impl Default for ProbitOptions {
    fn default() -> Self {
        Self {
            normalized: None,
            max_iterations: 100,
            gradient_tolerance: 1e-6,
        }
    }
}

/// Coefficient norm beyond which diverging Newton iterates are read as
/// separated data.
const SEPARATION_NORM: f64 = 50.0;

fn raw_index(sample: &SelectionSample, coef: &[f64]) -> Vec<f64> {
    let mut idx = sample.index(&coef[1..]);
    for v in &mut idx {
        *v += coef[0];
    }
    idx
}

fn signs(sample: &SelectionSample) -> impl Iterator<Item = f64> + '_ {
    sample.outcome.iter().map(|&y| if y { 1.0 } else { -1.0 })
}

/// Total log-likelihood at `coef = (intercept, δ)`.
pub fn probit_log_likelihood(sample: &SelectionSample, coef: &[f64]) -> f64 {
    raw_index(sample, coef)
        .iter()
        .zip(signs(sample))
        .map(|(&t, q)| log_normal_cdf(q * t))
        .sum()
}

/// Per-observation scores, `n × (k + 1)`.
pub fn probit_scores(sample: &SelectionSample, coef: &[f64]) -> DMatrix<f64> {
    let idx = raw_index(sample, coef);
    let k = sample.dim();
    let mut s = DMatrix::zeros(sample.n(), k + 1);
    for (i, (&t, q)) in idx.iter().zip(signs(sample)).enumerate() {
        let g = q * inverse_mills(q * t);
        s[(i, 0)] = g;
        for c in 0..k {
            s[(i, c + 1)] = g * sample.w[(i, c)];
        }
    }
    s
}

/// Observed information (negative Hessian of the total log-likelihood).
pub fn probit_information(sample: &SelectionSample, coef: &[f64]) -> DMatrix<f64> {
    let idx = raw_index(sample, coef);
    let k = sample.dim();
    let mut info = DMatrix::zeros(k + 1, k + 1);
    let mut x = DVector::zeros(k + 1);
    for (i, (&t, q)) in idx.iter().zip(signs(sample)).enumerate() {
        let curvature = -inverse_mills_derivative(q * t);
        x[0] = 1.0;
        for c in 0..k {
            x[c + 1] = sample.w[(i, c)];
        }
        info.ger(curvature, &x, &x, 1.0);
    }
    symmetrize(&info)
}

fn total_gradient(sample: &SelectionSample, coef: &[f64]) -> DVector<f64> {
    let s = probit_scores(sample, coef);
    DVector::from_iterator(s.ncols(), s.column_iter().map(|c| c.sum()))
}

/// Maximum-likelihood Probit of the positive-share indicator on `(1, w)`.
pub fn probit_fit(sample: &SelectionSample, options: &ProbitOptions) -> Result<FirstStageFit> {
    let n = sample.n();
    let k = sample.dim();
    if n == 0 {
        return Err(Error::invalid("probit needs at least one observation"));
    }
    let positives = sample.outcome.iter().filter(|&&y| y).count();
    if positives == 0 || positives == n {
        let mut direction = vec![0.0; k + 1];
        direction[0] = if positives == n { 1.0 } else { -1.0 };
        return Err(Error::PerfectSeparation { direction });
    }
    let normalized = options.normalized.unwrap_or_else(|| sample.default_normalized_component());
    if normalized >= k {
        return Err(Error::invalid(format!("normalized component {normalized} out of range")));
    }

    let nf = n as f64;
    let mut coef = DVector::<f64>::zeros(k + 1);
    let mut ll = probit_log_likelihood(sample, coef.as_slice());
    let mut grad = total_gradient(sample, coef.as_slice());
    let mut iterations = 0;
    let mut evaluations = 1;
    let sup = |g: &DVector<f64>| g.amax() / nf;
    while iterations < options.max_iterations && sup(&grad) > 1e-12 {
        let info = probit_information(sample, coef.as_slice());
        let step = match checked_inverse(&info, "probit information matrix") {
            Ok(inv) => inv * &grad,
            Err(_) if coef.norm() > SEPARATION_NORM => break,
            Err(e) => return Err(e),
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..50 {
            let candidate = &coef + t * &step;
            let value = probit_log_likelihood(sample, candidate.as_slice());
            evaluations += 1;
            // tolerate rounding in the summed log-likelihood near the optimum
            if value.is_finite() && value >= ll - 1e-12 * ll.abs().max(1.0) {
                coef = candidate;
                ll = value;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        grad = total_gradient(sample, coef.as_slice());
        if !moved || coef.norm() > SEPARATION_NORM {
            break;
        }
    }

    if coef.norm() > SEPARATION_NORM {
        return Err(Error::PerfectSeparation {
            direction: (&coef / coef.norm()).as_slice().to_vec(),
        });
    }
    let report = OptimizerReport {
        argmax: coef.as_slice().to_vec(),
        value: ll / nf,
        gradient_norm: sup(&grad),
        iterations,
        evaluations,
        converged: sup(&grad) <= options.gradient_tolerance,
        start_index: 0,
    };
    if !report.converged {
        return Err(Error::OptimizationFailure {
            message: format!("probit did not converge after {iterations} Newton steps"),
            report: Box::new(report),
        });
    }

    let covariance = checked_inverse(&probit_information(sample, coef.as_slice()), "probit information matrix")?;
    normalize(sample, coef.as_slice().to_vec(), symmetrize(&covariance), normalized, ll, report)
}

fn normalize(
    sample: &SelectionSample,
    coef: Vec<f64>,
    covariance: DMatrix<f64>,
    normalized: usize,
    log_likelihood: f64,
    report: OptimizerReport,
) -> Result<FirstStageFit> {
    let k = sample.dim();
    let anchor = coef[normalized + 1];
    if anchor == 0.0 || !anchor.is_finite() {
        return Err(Error::Estimation(format!(
            "probit coefficient on {} is zero; choose another normalized component",
            sample.names[normalized]
        )));
    }
    let mut warnings = Vec::new();
    let t_anchor = anchor / covariance[(normalized + 1, normalized + 1)].sqrt();
    if t_anchor.abs() < 2.0 {
        warnings.push(format!(
            "normalized component {} has probit t-statistic {t_anchor:.2}",
            sample.names[normalized]
        ));
    }

    // delta method for θ_a / θ_anchor
    let ratio: Vec<f64> = coef.iter().map(|c| c / anchor).collect();
    let mut jac = DMatrix::identity(k + 1, k + 1) / anchor;
    for a in 0..=k {
        jac[(a, normalized + 1)] -= ratio[a] / anchor;
    }
    let scaled = symmetrize(&(&jac * &covariance * jac.transpose()));

    let free: Vec<usize> = (0..k).filter(|&c| c != normalized).collect();
    let free_cov = DMatrix::from_fn(free.len(), free.len(), |a, b| scaled[(free[a] + 1, free[b] + 1)]);
    let std_errors = (0..k)
        .map(|c| (c != normalized).then(|| scaled[(c + 1, c + 1)].max(0.0).sqrt()))
        .collect();
    let delta_hat = ratio[1..].to_vec();
    let index_values = sample.index(&delta_hat);
    let propensity = raw_index(sample, &coef).into_iter().map(normal_cdf).collect();

    Ok(FirstStageFit {
        method: FirstStageMethod::Probit,
        names: sample.names.clone(),
        normalized,
        delta_hat,
        std_errors,
        covariance: free_cov,
        intercept: Some((ratio[0], scaled[(0, 0)].max(0.0).sqrt())),
        probit: Some(ProbitCoefficients { coefficients: coef, covariance }),
        orientation: anchor.signum(),
        index_values,
        outcomes: sample.outcome.clone(),
        propensity,
        bandwidth: None,
        log_likelihood,
        report,
        rows: sample.rows.clone(),
        warnings,
    })
}
