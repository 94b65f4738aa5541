//! Extensive-margin estimation: which products enter the choice set.
//!
//! Both estimators work on a [`SelectionSample`] (one row per inside good,
//! outcome = positive share) and return a [`FirstStageFit`] whose
//! coefficient vector is scale-normalized so one chosen component equals 1.

mod klein_spady;
mod probit;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::io::MarketDataset;
use crate::numerics::{clamp_probability, normal_cdf, pairs, OptimizerReport};

pub use klein_spady::{
    klein_spady_bootstrap, klein_spady_fit, ks_link_derivatives, ks_objective_value, ks_propensities,
    ks_propensity, KleinSpadyObjective, KleinSpadyOptions, KsStandardErrors,
};
pub use probit::{probit_fit, probit_information, probit_log_likelihood, probit_scores, ProbitOptions};

/// Binary-response data for the first stage.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionSample {
    pub names: Vec<String>,
    /// `n × k` extensive-margin characteristics.
    pub w: DMatrix<f64>,
    /// `true` when the product has a positive share.
    pub outcome: Vec<bool>,
    /// Dataset row of each observation.
    pub rows: Vec<usize>,
}

impl SelectionSample {
    /// Inside-good rows of `ds`, using the listed w columns.
    pub fn from_dataset(ds: &MarketDataset, columns: &[usize]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::invalid("first stage needs at least one w column"));
        }
        if let Some(&bad) = columns.iter().find(|&&c| c >= ds.dim_w()) {
            return Err(Error::invalid(format!("w column {bad} out of range (dim w = {})", ds.dim_w())));
        }
        let rows = ds.product_rows();
        let w = DMatrix::from_fn(rows.len(), columns.len(), |i, c| ds.rows[rows[i]].w[columns[c]]);
        let outcome = rows.iter().map(|&r| !ds.rows[r].censored()).collect();
        Ok(Self {
            names: columns.iter().map(|&c| ds.w_names[c].clone()).collect(),
            w,
            outcome,
            rows,
        })
    }

    /// All w columns of `ds`.
    pub fn all_columns(ds: &MarketDataset) -> Result<Self> {
        let cols: Vec<usize> = (0..ds.dim_w()).collect();
        Self::from_dataset(ds, &cols)
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn outcome_f64(&self) -> Vec<f64> {
        self.outcome.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// First column that takes non-integer values, the default scale anchor.
    pub fn default_normalized_component(&self) -> usize {
        (0..self.dim())
            .find(|&c| self.w.column(c).iter().any(|v| v.fract() != 0.0))
            .unwrap_or(0)
    }

    /// `w_i'δ` for every row.
    pub fn index(&self, delta: &[f64]) -> Vec<f64> {
        let d = nalgebra::DVector::from_column_slice(delta);
        (&self.w * d).as_slice().to_vec()
    }

    /// Copy with the given rows, in order (repeats allowed).
    pub fn subset(&self, picks: &[usize]) -> SelectionSample {
        SelectionSample {
            names: self.names.clone(),
            w: self.w.select_rows(picks),
            outcome: picks.iter().map(|&i| self.outcome[i]).collect(),
            rows: picks.iter().map(|&i| self.rows[i]).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FirstStageMethod {
    Probit,
    KleinSpady,
    /// Coefficients supplied by the caller (known truth, or no selection).
    Fixed,
}

/// Raw Probit coefficients on `(1, w)` and their covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbitCoefficients {
    /// Intercept first, then one entry per w column.
    pub coefficients: Vec<f64>,
    pub covariance: DMatrix<f64>,
}

impl ProbitCoefficients {
    pub fn index_at(&self, w: &[f64]) -> f64 {
        self.coefficients[0] + self.coefficients[1..].iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FirstStageFit {
    pub method: FirstStageMethod,
    pub names: Vec<String>,
    /// Position of the component fixed to 1.
    pub normalized: usize,
    /// Full coefficient vector; `delta_hat[normalized] == 1`.
    pub delta_hat: Vec<f64>,
    /// `None` at the normalized component.
    pub std_errors: Vec<Option<f64>>,
    /// Covariance of the free components, in the normalized scale.
    pub covariance: DMatrix<f64>,
    /// Normalized Probit intercept and its standard error.
    pub intercept: Option<(f64, f64)>,
    pub probit: Option<ProbitCoefficients>,
    /// `+1` when the probability of a positive share rises with the
    /// normalized index, `−1` otherwise.
    pub orientation: f64,
    /// `w_i'δ̂` per observation (normalized, no intercept).
    pub index_values: Vec<f64>,
    pub outcomes: Vec<bool>,
    /// Estimated `P(π > 0 | w)` per observation.
    pub propensity: Vec<f64>,
    pub bandwidth: Option<f64>,
    pub log_likelihood: f64,
    pub report: OptimizerReport,
    pub rows: Vec<usize>,
    pub warnings: Vec<String>,
}

impl FirstStageFit {
    /// Fit object for a coefficient vector chosen by the caller.
    ///
    /// Used when δ is known (oracle checks) or when no observation is
    /// censored and the first stage is not estimable.
    pub fn fixed(sample: &SelectionSample, delta: &[f64], normalized: usize) -> Result<Self> {
        if delta.len() != sample.dim() {
            return Err(Error::DimensionMismatch {
                what: "first-stage coefficients",
                expected: sample.dim(),
                found: delta.len(),
            });
        }
        let index_values = sample.index(delta);
        let share = sample.outcome.iter().filter(|&&b| b).count() as f64 / sample.n().max(1) as f64;
        let free = sample.dim().saturating_sub(1);
        Ok(Self {
            method: FirstStageMethod::Fixed,
            names: sample.names.clone(),
            normalized,
            delta_hat: delta.to_vec(),
            std_errors: vec![None; sample.dim()],
            covariance: DMatrix::zeros(free, free),
            intercept: None,
            probit: None,
            orientation: 1.0,
            index_values,
            outcomes: sample.outcome.clone(),
            propensity: vec![clamp_probability(share); sample.n()],
            bandwidth: None,
            log_likelihood: f64::NAN,
            report: OptimizerReport {
                argmax: delta.to_vec(),
                value: f64::NAN,
                gradient_norm: 0.0,
                iterations: 0,
                evaluations: 0,
                converged: true,
                start_index: 0,
            },
            rows: sample.rows.clone(),
            warnings: Vec::new(),
        })
    }

    /// Index values of the observations with a positive share.
    pub fn uncensored_index(&self) -> Vec<f64> {
        self.index_values
            .iter()
            .zip(&self.outcomes)
            .filter(|(_, &y)| y)
            .map(|(&v, _)| v)
            .collect()
    }

    /// Dataset row → normalized index.
    pub fn index_by_row(&self) -> std::collections::HashMap<usize, f64> {
        self.rows.iter().copied().zip(self.index_values.iter().copied()).collect()
    }

    pub fn index_at(&self, w: &[f64]) -> f64 {
        self.delta_hat.iter().zip(w).map(|(a, b)| a * b).sum()
    }
}

/// Fitted `P(π > 0 | w)` at a new point.
///
/// Probit evaluates `Φ(index)`; Klein–Spady uses the full-sample
/// Nadaraya–Watson estimate at `w'δ̂` without leaving anything out.
pub fn propensity_at(fit: &FirstStageFit, w: &[f64]) -> f64 {
    match (&fit.probit, fit.method) {
        (Some(p), FirstStageMethod::Probit) => normal_cdf(p.index_at(w)),
        _ => match fit.bandwidth {
            Some(h) => nadaraya_watson(&fit.index_values, &fit.outcomes, h, fit.index_at(w)),
            None => fit.propensity.first().copied().unwrap_or(0.5),
        },
    }
}

/// Full-sample kernel estimate of `P(outcome | index = v)`, clamped.
pub fn nadaraya_watson(index: &[f64], outcomes: &[bool], h: f64, v: f64) -> f64 {
    let mut weights = vec![0.0; index.len()];
    pairs::gaussian_weights(v, index, 1.0 / h, &mut weights);
    let den = pairs::lane_sum(&weights);
    let num: f64 = weights.iter().zip(outcomes).filter(|(_, &y)| y).map(|(k, _)| k).sum();
    if den > 0.0 {
        clamp_probability(num / den)
    } else {
        // far outside the data: the nearest observation decides
        let nearest = index
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - v).abs().total_cmp(&(b.1 - v).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        clamp_probability(if outcomes.get(nearest).copied().unwrap_or(false) { 1.0 } else { 0.0 })
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nadaraya_watson_constant_outcomes() {
        let idx = [0.0, 1.0, 2.0];
        assert_eq!(nadaraya_watson(&idx, &[true, true, true], 0.5, 1.0), 1.0 - 1e-12);
        let mixed = nadaraya_watson(&idx, &[true, false, true], 100.0, 1.0);
        assert!((mixed - 2.0 / 3.0).abs() < 1e-4);
    }

    #[test]
    fn default_anchor_skips_integer_columns() {
        let s = SelectionSample {
            names: vec!["count".into(), "size".into()],
            w: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 2.0, 1.5]),
            outcome: vec![true, false],
            rows: vec![0, 1],
        };
        assert_eq!(s.default_normalized_component(), 1);
    }
}
