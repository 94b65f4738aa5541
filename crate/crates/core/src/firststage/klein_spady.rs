use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::linalg::{checked_inverse, symmetrize};
use crate::numerics::{
    bandwidth, bfgs_ascent, clamp_probability, maximize, multistart_draws, pairs, stream_rng, BandwidthRule,
    Objective, OptimizerOptions, ScaleSource, PROBABILITY_FLOOR,
};

use super::{FirstStageFit, FirstStageMethod, SelectionSample};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KsStandardErrors {
    /// Pseudo-MLE sandwich built from the kernel link derivatives.
    Sandwich,
    /// Weighted-resampling bootstrap of the whole fit.
    Bootstrap { replications: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KleinSpadyOptions {
    /// Defaults to the Probit fit's normalized component.
    pub normalized: Option<usize>,
    /// `C_1` in the bandwidth rule.
    pub bandwidth_constant: f64,
    pub starts: usize,
    pub seed: u64,
    pub optimizer: OptimizerOptions,
    pub standard_errors: KsStandardErrors,
}

impl Default for KleinSpadyOptions {
    fn default() -> Self {
        Self {
            normalized: None,
            bandwidth_constant: 1.0,
            starts: 100,
            seed: 0,
            optimizer: OptimizerOptions::default(),
            standard_errors: KsStandardErrors::Sandwich,
        }
    }
}

/// Leave-one-out kernel sums `Σ_{k≠j} c_k K_jk` and `Σ_{k≠j} c_k y_k K_jk`.
fn kernel_sums(v: &[f64], c: &[f64], cy: &[f64], inv_h: f64) -> (Vec<f64>, Vec<f64>) {
    let n = v.len();
    let mut acc = pairs::upper_triangle_sums(n, 2, |i, acc, k| {
        let rest = &v[i + 1..];
        k.resize(rest.len(), 0.0);
        pairs::gaussian_weights(v[i], rest, inv_h, k);
        let (s0, s1) = acc.split_at_mut(n);
        s0[i] += pairs::lane_dot(k, &c[i + 1..]);
        s1[i] += pairs::lane_dot(k, &cy[i + 1..]);
        pairs::axpy(c[i], k, &mut s0[i + 1..]);
        pairs::axpy(cy[i], k, &mut s1[i + 1..]);
    });
    let s1 = acc.split_off(n);
    (acc, s1)
}

/// Leave-one-out ratio `Σ_{k≠j} cy_k K_jk / Σ_{k≠j} c_k K_jk` with every
/// kernel weight rescaled by the nearest weighted neighbour, for rows whose
/// plain sums underflow. `None` when no other row carries weight.
fn rescaled_ratio(v: &[f64], j: usize, c: &[f64], cy: &[f64], inv_h: f64) -> Option<f64> {
    let dist = |k: usize| {
        let u = (v[k] - v[j]) * inv_h;
        0.5 * u * u
    };
    let others = || (0..v.len()).filter(move |&k| k != j && c[k] > 0.0);
    let nearest = others().map(dist).min_by(f64::total_cmp)?;
    let (mut den, mut num) = (0.0, 0.0);
    for k in others() {
        let w = (nearest - dist(k)).exp();
        den += c[k] * w;
        num += cy[k] * w;
    }
    Some(num / den)
}

/// The Klein–Spady pseudo-log-likelihood as a function of the free
/// coefficients, averaged over (weighted) observations.
///
/// The normalized component is held at 1 and the intercept is absorbed by
/// the kernel link.
pub struct KleinSpadyObjective<'a> {
    sample: &'a SelectionSample,
    normalized: usize,
    free: Vec<usize>,
    inv_h: f64,
    y: Vec<f64>,
    weight: Vec<f64>,
    weighted_y: Vec<f64>,
    total_weight: f64,
}

impl<'a> KleinSpadyObjective<'a> {
    pub fn new(sample: &'a SelectionSample, normalized: usize, h: f64) -> Self {
        Self::weighted(sample, normalized, h, vec![1.0; sample.n()])
    }

    /// Observation `i` counts `weight[i]` times, and its copies never enter
    /// its own leave-out sum.
    pub fn weighted(sample: &'a SelectionSample, normalized: usize, h: f64, weight: Vec<f64>) -> Self {
        let y = sample.outcome_f64();
        let weighted_y = y.iter().zip(&weight).map(|(a, b)| a * b).collect();
        Self {
            sample,
            normalized,
            free: (0..sample.dim()).filter(|&c| c != normalized).collect(),
            inv_h: 1.0 / h,
            y,
            total_weight: weight.iter().sum(),
            weight,
            weighted_y,
        }
    }

    /// Full coefficient vector for free parameters `theta`.
    pub fn delta(&self, theta: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; self.sample.dim()];
        d[self.normalized] = 1.0;
        for (&c, &t) in self.free.iter().zip(theta) {
            d[c] = t;
        }
        d
    }

    pub fn free_components(&self) -> &[usize] {
        &self.free
    }

    /// Clamped leave-one-out propensities at `theta`, or `None` when some
    /// observation has no weighted neighbour.
    ///
    /// Rows isolated far enough for their kernel sums to underflow keep
    /// `S0 = 0`, which drops them from the gradient; their kernel
    /// derivatives underflow as well.
    fn propensities(&self, v: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let (s0, s1) = kernel_sums(v, &self.weight, &self.weighted_y, self.inv_h);
        let mut p = Vec::with_capacity(v.len());
        for (j, (&a, &b)) in s0.iter().zip(&s1).enumerate() {
            p.push(if a > 0.0 {
                clamp_probability(b / a)
            } else if self.weight[j] > 0.0 {
                clamp_probability(rescaled_ratio(v, j, &self.weight, &self.weighted_y, self.inv_h)?)
            } else {
                0.5
            });
        }
        Some((p, s0))
    }

    fn mean_log_likelihood(&self, p: &[f64]) -> f64 {
        let total: f64 = p
            .iter()
            .zip(&self.y)
            .zip(&self.weight)
            .map(|((&p, &y), &c)| c * if y > 0.0 { p.ln() } else { (1.0 - p).ln() })
            .sum();
        total / self.total_weight
    }
}

fn clamped(p: f64) -> bool {
    p <= PROBABILITY_FLOOR || p >= 1.0 - PROBABILITY_FLOOR
}

impl Objective for KleinSpadyObjective<'_> {
    fn value(&self, theta: &[f64]) -> f64 {
        let v = self.sample.index(&self.delta(theta));
        match self.propensities(&v) {
            Some((p, _)) => self.mean_log_likelihood(&p),
            None => f64::NEG_INFINITY,
        }
    }

    fn value_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let v = self.sample.index(&self.delta(theta));
        let Some((p, s0)) = self.propensities(&v) else {
            return (f64::NEG_INFINITY, vec![0.0; theta.len()]);
        };
        let value = self.mean_log_likelihood(&p);
        let n = v.len();
        let inv_h = self.inv_h;
        // b_j = c_j · (∂ℓ_j/∂P_j) / (h · S0_j); zero where the clamp binds
        let cb: Vec<f64> = (0..n)
            .map(|j| {
                if clamped(p[j]) || s0[j] <= 0.0 {
                    0.0
                } else {
                    let a = if self.y[j] > 0.0 { 1.0 / p[j] } else { -1.0 / (1.0 - p[j]) };
                    self.weight[j] * a * inv_h / s0[j]
                }
            })
            .collect();
        let (y, c) = (&self.y, &self.weight);
        // net_i = Σ_j c_ji − Σ_k c_ik with c_jk = b_j K'(u_jk) c_k (y_k − P_j)
        let net = pairs::upper_triangle_sums(n, 1, |i, acc, d| {
            let m = n - i - 1;
            d.resize(m, 0.0);
            let (vi, yi, pi, ci, bi) = (v[i], y[i], p[i], c[i], cb[i]);
            for (((((o, &vk), &yk), &pk), &ck), &bk) in d
                .iter_mut()
                .zip(&v[i + 1..])
                .zip(&y[i + 1..])
                .zip(&p[i + 1..])
                .zip(&c[i + 1..])
                .zip(&cb[i + 1..])
            {
                let u = (vk - vi) * inv_h;
                let kprime = -u * pairs::exp_nonpositive(-0.5 * u * u);
                *o = kprime * (bi * ck * (yk - pi) + bk * ci * (yi - pk));
            }
            acc[i] -= pairs::lane_sum(d);
            pairs::axpy(1.0, d, &mut acc[i + 1..]);
        });
        let grad = self
            .free
            .iter()
            .map(|&col| pairs::lane_dot(&net, self.sample.w.column(col).as_slice()) / self.total_weight)
            .collect();
        (value, grad)
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.value_and_gradient(theta).1
    }
}

/// Leave-one-out kernel estimate of `P(outcome = 1 | index)` at observation
/// `leave_out`, clamped to `[1e-12, 1 − 1e-12]`.
pub fn ks_propensity(index: &[f64], outcomes: &[bool], h: f64, leave_out: usize) -> Result<f64> {
    if index.len() < 2 || outcomes.len() != index.len() {
        return Err(Error::invalid("leave-one-out propensity needs n ≥ 2 matched observations"));
    }
    let mut weights = vec![0.0; index.len()];
    pairs::gaussian_weights(index[leave_out], index, 1.0 / h, &mut weights);
    weights[leave_out] = 0.0;
    let den = pairs::lane_sum(&weights);
    let num: f64 = weights.iter().zip(outcomes).filter(|(_, &y)| y).map(|(k, _)| k).sum();
    if den > 0.0 {
        return Ok(clamp_probability(num / den));
    }
    let ones = vec![1.0; index.len()];
    let y: Vec<f64> = outcomes.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    rescaled_ratio(index, leave_out, &ones, &y, 1.0 / h)
        .map(clamp_probability)
        .ok_or_else(|| Error::Estimation(format!("empty kernel sum at observation {leave_out}")))
}

/// Leave-one-out propensities for every observation.
pub fn ks_propensities(index: &[f64], outcomes: &[bool], h: f64) -> Result<Vec<f64>> {
    let n = index.len();
    if n < 2 || outcomes.len() != n {
        return Err(Error::invalid("leave-one-out propensity needs n ≥ 2 matched observations"));
    }
    let ones = vec![1.0; n];
    let y: Vec<f64> = outcomes.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let (s0, s1) = kernel_sums(index, &ones, &y, 1.0 / h);
    s0.iter()
        .zip(&s1)
        .enumerate()
        .map(|(j, (&a, &b))| {
            if a > 0.0 {
                return Ok(clamp_probability(b / a));
            }
            rescaled_ratio(index, j, &ones, &y, 1.0 / h)
                .map(clamp_probability)
                .ok_or_else(|| Error::Estimation(format!("empty kernel sum at observation {j}")))
        })
        .collect()
}

/// Mean pseudo-log-likelihood at a full coefficient vector.
pub fn ks_objective_value(sample: &SelectionSample, delta: &[f64], normalized: usize, h: f64) -> f64 {
    let obj = KleinSpadyObjective::new(sample, normalized, h);
    let theta: Vec<f64> = obj.free.iter().map(|&c| delta[c] / delta[normalized]).collect();
    obj.value(&theta)
}

/// Leave-one-out propensities and their derivatives with respect to the
/// free coefficients (`n × (k − 1)`), at full coefficient vector `delta`.
pub fn ks_link_derivatives(
    sample: &SelectionSample,
    delta: &[f64],
    normalized: usize,
    h: f64,
) -> (Vec<f64>, DMatrix<f64>) {
    let v = sample.index(delta);
    let y = sample.outcome_f64();
    let free: Vec<usize> = (0..sample.dim()).filter(|&c| c != normalized).collect();
    let inv_h = 1.0 / h;
    let rows = pairs::per_row(v.len(), |i, buf| {
        let n = v.len();
        buf.resize(2 * n, 0.0);
        let (k, ck) = buf.split_at_mut(n);
        pairs::gaussian_weights(v[i], &v, inv_h, k);
        k[i] = 0.0;
        let s0 = pairs::lane_sum(k);
        let s1 = pairs::lane_dot(k, &y);
        if !(s0 > 0.0) {
            return (0.5, vec![0.0; free.len()]);
        }
        let p = s1 / s0;
        for j in 0..n {
            let u = (v[j] - v[i]) * inv_h;
            ck[j] = -u * k[j] * (y[j] - p);
        }
        let total = pairs::lane_sum(ck);
        let grad = free
            .iter()
            .map(|&c| {
                let col = sample.w.column(c);
                (pairs::lane_dot(ck, col.as_slice()) - col[i] * total) * inv_h / s0
            })
            .collect();
        (p, grad)
    });
    let q = free.len();
    let mut dp = DMatrix::zeros(v.len(), q);
    let mut p = Vec::with_capacity(v.len());
    for (i, (pi, g)) in rows.into_iter().enumerate() {
        p.push(pi);
        for f in 0..q {
            dp[(i, f)] = g[f];
        }
    }
    (p, dp)
}

fn sandwich(sample: &SelectionSample, delta: &[f64], normalized: usize, h: f64) -> Result<DMatrix<f64>> {
    let (p, dp) = ks_link_derivatives(sample, delta, normalized, h);
    let q = dp.ncols();
    let mut bread = DMatrix::zeros(q, q);
    let mut meat = DMatrix::zeros(q, q);
    for i in 0..sample.n() {
        let pi = clamp_probability(p[i]);
        if clamped(pi) {
            continue;
        }
        let g = dp.row(i).transpose();
        let a = if sample.outcome[i] { 1.0 / pi } else { -1.0 / (1.0 - pi) };
        bread -= (&g * g.transpose()) / (pi * (1.0 - pi));
        meat += (&g * g.transpose()) * (a * a);
    }
    let inv = checked_inverse(&bread, "Klein-Spady information matrix")?;
    Ok(symmetrize(&(&inv * meat * &inv)))
}

/// Multistart Klein–Spady pseudo-MLE seeded by a Probit fit.
pub fn klein_spady_fit(
    sample: &SelectionSample,
    probit: &FirstStageFit,
    options: &KleinSpadyOptions,
) -> Result<FirstStageFit> {
    let k = sample.dim();
    if k < 2 {
        return Err(Error::invalid("Klein-Spady needs at least two w columns (one is normalized)"));
    }
    if sample.n() != probit.index_values.len() {
        return Err(Error::DimensionMismatch {
            what: "probit fit observations",
            expected: sample.n(),
            found: probit.index_values.len(),
        });
    }
    let normalized = options.normalized.unwrap_or(probit.normalized);
    let center_full: Vec<f64> = match &probit.probit {
        Some(raw) => {
            let anchor = raw.coefficients[normalized + 1];
            if anchor == 0.0 {
                return Err(Error::Estimation("probit coefficient on the normalized component is zero".into()));
            }
            raw.coefficients[1..].iter().map(|c| c / anchor).collect()
        }
        None => {
            let anchor = probit.delta_hat[normalized];
            probit.delta_hat.iter().map(|c| c / anchor).collect()
        }
    };
    let probit_index = sample.index(&center_full);
    let rule = BandwidthRule::new(options.bandwidth_constant, ScaleSource::ProbitIndex)?;
    let h = bandwidth(&rule, &probit_index)?;

    let objective = KleinSpadyObjective::new(sample, normalized, h);
    let center: Vec<f64> = objective.free.iter().map(|&c| center_full[c]).collect();
    let starts = multistart_draws(&center, options.starts.max(1), options.seed);
    let report = maximize(&objective, &starts, &options.optimizer)?;
    let delta_hat = objective.delta(&report.argmax);

    let covariance = match options.standard_errors {
        KsStandardErrors::Sandwich => sandwich(sample, &delta_hat, normalized, h)?,
        KsStandardErrors::Bootstrap { replications } => {
            klein_spady_bootstrap(sample, &delta_hat, normalized, h, replications, options.seed, &options.optimizer)?
        }
    };
    let mut std_errors = vec![None; k];
    for (f, &c) in objective.free.iter().enumerate() {
        std_errors[c] = Some(covariance[(f, f)].max(0.0).sqrt());
    }
    let index_values = sample.index(&delta_hat);
    let propensity = ks_propensities(&index_values, &sample.outcome, h)?;
    let mut warnings = probit.warnings.clone();
    if report.start_index != 0 {
        warnings.push(format!("multistart winner is start {} (not the probit start)", report.start_index));
    }
    Ok(FirstStageFit {
        method: FirstStageMethod::KleinSpady,
        names: sample.names.clone(),
        normalized,
        delta_hat,
        std_errors,
        covariance,
        intercept: None,
        probit: None,
        orientation: probit.orientation,
        index_values,
        outcomes: sample.outcome.clone(),
        propensity,
        bandwidth: Some(h),
        log_likelihood: report.value * sample.n() as f64,
        report,
        rows: sample.rows.clone(),
        warnings,
    })
}

/// Bootstrap covariance of the free Klein–Spady coefficients.
///
/// Each replication redraws observations with replacement, expressed as
/// integer weights so duplicates never smooth themselves, and re-maximizes
/// from `delta` with the bandwidth held fixed.
pub fn klein_spady_bootstrap(
    sample: &SelectionSample,
    delta: &[f64],
    normalized: usize,
    h: f64,
    replications: usize,
    seed: u64,
    optimizer: &OptimizerOptions,
) -> Result<DMatrix<f64>> {
    if replications < 2 {
        return Err(Error::invalid("bootstrap needs at least two replications"));
    }
    let n = sample.n();
    let free: Vec<usize> = (0..sample.dim()).filter(|&c| c != normalized).collect();
    let start: Vec<f64> = free.iter().map(|&c| delta[c]).collect();
    let mut draws = Vec::with_capacity(replications);
    for r in 0..replications {
        let mut rng = stream_rng(seed, 0x6b73_0000 + r as u64);
        let mut weight = vec![0.0; n];
        for _ in 0..n {
            weight[rng.gen_range(0..n)] += 1.0;
        }
        let obj = KleinSpadyObjective::weighted(sample, normalized, h, weight);
        let run = bfgs_ascent(&obj, &start, optimizer, 0);
        if run.value.is_finite() {
            draws.push(DVector::from_vec(run.argmax));
        }
    }
    if draws.len() < 2 {
        return Err(Error::Estimation("bootstrap replications all failed".into()));
    }
    let m = draws.len() as f64;
    let mean = draws.iter().fold(DVector::zeros(free.len()), |a, d| a + d) / m;
    let cov = draws
        .iter()
        .fold(DMatrix::zeros(free.len(), free.len()), |a, d| a + (d - &mean) * (d - &mean).transpose())
        / (m - 1.0);
    Ok(cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::firststage::testdata::probit_sample;
    use crate::firststage::{probit_fit, ProbitOptions};
    use crate::numerics::central_difference_gradient;

    #[test]
    fn two_observation_propensities() {
        let idx = [0.0, 1.0];
        let y = [true, false];
        assert_eq!(ks_propensity(&idx, &y, 0.7, 0).unwrap(), 1e-12);
        assert_eq!(ks_propensity(&idx, &y, 0.7, 1).unwrap(), 1.0 - 1e-12);
        assert_eq!(ks_propensities(&idx, &y, 0.7).unwrap(), vec![1e-12, 1.0 - 1e-12]);
    }

    #[test]
    fn isolated_observation_follows_its_nearest_neighbours() {
        // the last point sits ~80 bandwidths away, so its plain kernel sums underflow
        let idx = [0.0, 0.1, 0.2, 0.3, 40.0];
        let y = [true, true, false, false, true];
        let p = ks_propensities(&idx, &y, 0.5).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        // its nearest neighbours have zero outcomes
        assert_eq!(p[4], 1e-12);
        assert_eq!(ks_propensity(&idx, &y, 0.5, 4).unwrap(), p[4]);

        let sample = SelectionSample {
            names: vec!["a".into(), "b".into()],
            w: DMatrix::from_row_slice(5, 2, &[0.0, 1.0, 0.1, 0.0, 0.2, 1.0, 0.3, 0.0, 40.0, 1.0]),
            outcome: y.to_vec(),
            rows: (0..5).collect(),
        };
        let obj = KleinSpadyObjective::new(&sample, 0, 0.5);
        let (value, grad) = obj.value_and_gradient(&[0.01]);
        assert!(value.is_finite() && grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn all_neighbors_positive_clamps() {
        let idx = [0.0, 0.5, 1.0, 1.5];
        assert_eq!(ks_propensity(&idx, &[false, true, true, true], 0.3, 0).unwrap(), 1.0 - 1e-12);
    }

    #[test]
    fn independent_outcomes_give_one_half() {
        let mut rng = stream_rng(3, 0);
        let n = 10_000;
        let idx: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 4.0).collect();
        let y: Vec<bool> = (0..n).map(|_| rng.gen::<bool>()).collect();
        let p = ks_propensities(&idx, &y, 0.3).unwrap();
        assert!(p.iter().all(|&p| (p - 0.5).abs() < 0.05), "max dev {}", p.iter().fold(0.0f64, |m, p| m.max((p - 0.5).abs())));
    }

    #[test]
    fn vectorized_matches_single() {
        let s = probit_sample(300, 0.1, &[1.0, 0.5], 2);
        let idx = s.index(&[1.0, 0.5]);
        let all = ks_propensities(&idx, &s.outcome, 0.4).unwrap();
        for j in [0, 17, 299] {
            let one = ks_propensity(&idx, &s.outcome, 0.4, j).unwrap();
            assert!((all[j] - one).abs() < 1e-13);
        }
    }

    #[test]
    fn location_shift_leaves_propensities_unchanged() {
        let s = probit_sample(200, 0.0, &[1.0, -0.5], 6);
        let idx = s.index(&[1.0, -0.5]);
        let shifted: Vec<f64> = idx.iter().map(|v| v + 3.0).collect();
        let a = ks_propensities(&idx, &s.outcome, 0.5).unwrap();
        let b = ks_propensities(&shifted, &s.outcome, 0.5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let s = probit_sample(400, 0.2, &[1.0, -0.6, 0.4], 12);
        let obj = KleinSpadyObjective::new(&s, 0, 0.35);
        let theta = [-0.5, 0.3];
        let (_, g) = obj.value_and_gradient(&theta);
        let fd = central_difference_gradient(|t| obj.value(t), &theta);
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-7, "{g:?} vs {fd:?}");
        }
    }

    #[test]
    fn weighted_gradient_matches_central_differences() {
        let s = probit_sample(300, 0.2, &[1.0, -0.6], 13);
        let weight: Vec<f64> = (0..300).map(|i| (i % 3) as f64).collect();
        let obj = KleinSpadyObjective::weighted(&s, 0, 0.4, weight);
        let theta = [-0.4];
        let (_, g) = obj.value_and_gradient(&theta);
        let fd = central_difference_gradient(|t| obj.value(t), &theta);
        assert!((g[0] - fd[0]).abs() < 1e-7, "{g:?} vs {fd:?}");
    }

    #[test]
    fn link_derivatives_match_objective_gradient() {
        let s = probit_sample(300, 0.0, &[1.0, 0.8], 14);
        let obj = KleinSpadyObjective::new(&s, 0, 0.4);
        let (_, g) = obj.value_and_gradient(&[0.7]);
        let (p, dp) = ks_link_derivatives(&s, &[1.0, 0.7], 0, 0.4);
        let mut total = 0.0;
        for i in 0..s.n() {
            let pi = clamp_probability(p[i]);
            if clamped(pi) {
                continue;
            }
            let a = if s.outcome[i] { 1.0 / pi } else { -1.0 / (1.0 - pi) };
            total += a * dp[(i, 0)];
        }
        assert!((total / s.n() as f64 - g[0]).abs() < 1e-10);
    }

    #[test]
    fn gaussian_errors_agree_with_probit_direction() {
        let s = probit_sample(2000, 0.3, &[1.0, -0.5, 0.8], 21);
        let probit = probit_fit(&s, &ProbitOptions::default()).unwrap();
        let opts = KleinSpadyOptions {
            starts: 3,
            ..Default::default()
        };
        let ks = klein_spady_fit(&s, &probit, &opts).unwrap();
        assert_eq!(ks.delta_hat[0], 1.0);
        for c in 1..3 {
            let se = ks.std_errors[c].unwrap();
            assert!(
                (ks.delta_hat[c] - probit.delta_hat[c]).abs() < 3.0 * se,
                "component {c}: ks {} probit {} se {se}",
                ks.delta_hat[c],
                probit.delta_hat[c]
            );
        }
        assert!(ks.report.value >= ks_objective_value(&s, &probit.delta_hat, 0, ks.bandwidth.unwrap()));
        assert!(ks.propensity.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn scaling_the_truth_keeps_the_normalized_target() {
        let opts = KleinSpadyOptions { starts: 1, ..Default::default() };
        for scale in [1.0, 2.5] {
            let s = probit_sample(1500, 0.0, &[scale, -0.5 * scale], 31);
            let probit = probit_fit(&s, &ProbitOptions::default()).unwrap();
            let ks = klein_spady_fit(&s, &probit, &opts).unwrap();
            let se = ks.std_errors[1].unwrap();
            assert!((ks.delta_hat[1] + 0.5).abs() < 3.0 * se, "scale {scale}: {} ± {se}", ks.delta_hat[1]);
        }
    }

    #[test]
    fn one_start_equals_many_on_unimodal_problem() {
        let s = probit_sample(600, 0.1, &[1.0, 0.6], 41);
        let probit = probit_fit(&s, &ProbitOptions::default()).unwrap();
        let one = klein_spady_fit(&s, &probit, &KleinSpadyOptions { starts: 1, ..Default::default() }).unwrap();
        let many = klein_spady_fit(&s, &probit, &KleinSpadyOptions { starts: 6, ..Default::default() }).unwrap();
        assert!((one.delta_hat[1] - many.delta_hat[1]).abs() < 1e-5);
    }
}
