//! CES demand system with an exponential, gated quality kernel.
//!
//! A product's quality kernel is `1{γ + w'δ + η > 0} · exp(α + x'β + ξ)`.
//! Quantities, shares and elasticities below are evaluated in log space
//! with max-subtraction, since the share system is a softmax over
//! `ln χ_j − σ ln p_j`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Parameters of the gated exponential quality kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct QualityKernelParams {
    /// Elasticity of substitution, strictly positive.
    pub sigma: f64,
    /// Intensive-margin intercept.
    pub alpha: f64,
    /// Intensive-margin coefficients on `x`.
    pub beta: Vec<f64>,
    /// Extensive-margin intercept.
    pub gamma: f64,
    /// Extensive-margin coefficients on `w`.
    pub delta: Vec<f64>,
}

impl QualityKernelParams {
    pub fn new(sigma: f64, alpha: f64, beta: Vec<f64>, gamma: f64, delta: Vec<f64>) -> Result<Self> {
        let params = Self {
            sigma,
            alpha,
            beta,
            gamma,
            delta,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        let all_finite = [self.alpha, self.gamma]
            .iter()
            .chain(&self.beta)
            .chain(&self.delta)
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::invalid("kernel parameters must be finite"));
        }
        Ok(())
    }
}

/// One product in one market, with its latent unobservables.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductPoint {
    pub price: f64,
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    /// Intensive-margin unobservable.
    pub xi: f64,
    /// Extensive-margin unobservable.
    pub eta: f64,
}

impl ProductPoint {
    /// The outside good: unit price, zero characteristics and `ξ = 0`.
    ///
    /// `η = +∞` keeps its gate open for any `γ`.
    pub fn numeraire(dim_x: usize, dim_w: usize) -> Self {
        Self {
            price: 1.0,
            x: vec![0.0; dim_x],
            w: vec![0.0; dim_w],
            xi: 0.0,
            eta: f64::INFINITY,
        }
    }

    pub fn log_price(&self) -> f64 {
        self.price.ln()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dims(point: &ProductPoint, params: &QualityKernelParams) -> Result<()> {
    if point.x.len() != params.beta.len() {
        return Err(Error::DimensionMismatch {
            what: "x vs beta",
            expected: params.beta.len(),
            found: point.x.len(),
        });
    }
    if point.w.len() != params.delta.len() {
        return Err(Error::DimensionMismatch {
            what: "w vs delta",
            expected: params.delta.len(),
            found: point.w.len(),
        });
    }
    Ok(())
}

/// Extensive-margin index `γ + w'δ + η`.
pub fn gate_index(point: &ProductPoint, params: &QualityKernelParams) -> Result<f64> {
    check_dims(point, params)?;
    Ok(params.gamma + dot(&point.w, &params.delta) + point.eta)
}

/// Whether the product enters the choice set. Closed at exactly zero.
pub fn gate_open(point: &ProductPoint, params: &QualityKernelParams) -> Result<bool> {
    Ok(gate_index(point, params)? > 0.0)
}

/// `ln χ` for an open gate, `None` when the gate is closed.
pub fn log_quality(point: &ProductPoint, params: &QualityKernelParams) -> Result<Option<f64>> {
    if !gate_open(point, params)? {
        return Ok(None);
    }
    Ok(Some(params.alpha + dot(&point.x, &params.beta) + point.xi))
}

pub fn eval_quality_kernel(point: &ProductPoint, params: &QualityKernelParams) -> Result<f64> {
    Ok(log_quality(point, params)?.map_or(0.0, f64::exp))
}

fn check_prices(products: &[ProductPoint]) -> Result<()> {
    match products.iter().find(|p| !(p.price > 0.0) || !p.price.is_finite()) {
        Some(p) => Err(Error::invalid(format!("price must be positive, got {}", p.price))),
        None => Ok(()),
    }
}

/// Normalized softmax of `scores`, skipping `None` entries (exact zeros).
fn softmax_open(scores: &[Option<f64>]) -> Result<Vec<f64>> {
    let max = scores
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateDemand);
    }
    let weights: Vec<f64> = scores
        .iter()
        .map(|s| s.map_or(0.0, |s| (s - max).exp()))
        .collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Marshallian demand `q_j = y χ_j p_j^{−σ} / Σ_k χ_k p_k^{1−σ}`.
pub fn marshallian_quantities(
    products: &[ProductPoint],
    params: &QualityKernelParams,
    budget: f64,
) -> Result<Vec<f64>> {
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(Error::invalid(format!("budget must be positive, got {budget}")));
    }
    check_prices(products)?;
    let sigma = params.sigma;
    let log_quality: Vec<Option<f64>> = products
        .iter()
        .map(|p| log_quality(p, params))
        .collect::<Result<_>>()?;
    // Budget shares b_c = χ_c p_c^{1−σ} / Σ, then q_j = y b_j / p_j.
    let spend_scores: Vec<Option<f64>> = log_quality
        .iter()
        .zip(products)
        .map(|(lq, p)| lq.map(|lq| lq + (1.0 - sigma) * p.log_price()))
        .collect();
    let budget_shares = softmax_open(&spend_scores)?;
    Ok(budget_shares
        .iter()
        .zip(products)
        .map(|(b, p)| budget * b / p.price)
        .collect())
}

/// Predicted quantity shares `π_j = χ_j p_j^{−σ} / Σ_k χ_k p_k^{−σ}`.
pub fn predicted_shares(products: &[ProductPoint], params: &QualityKernelParams) -> Result<Vec<f64>> {
    check_prices(products)?;
    let scores: Vec<Option<f64>> = products
        .iter()
        .map(|p| Ok(log_quality(p, params)?.map(|lq| lq - params.sigma * p.log_price())))
        .collect::<Result<_>>()?;
    softmax_open(&scores)
}

/// `ln(π_j / π_ref)` for every `j ≠ ref` with a positive share.
///
/// Censored entries are omitted; each output pair carries the original index.
pub fn log_share_ratio(shares: &[f64], reference: usize) -> Result<Vec<(usize, f64)>> {
    let reference_share = *shares
        .get(reference)
        .ok_or_else(|| Error::invalid(format!("reference index {reference} out of range")))?;
    if !(reference_share > 0.0) {
        return Err(Error::InvalidReference(reference_share));
    }
    let log_ref = reference_share.ln();
    Ok(shares
        .iter()
        .enumerate()
        .filter(|&(j, &s)| j != reference && s > 0.0)
        .map(|(j, &s)| (j, s.ln() - log_ref))
        .collect())
}

/// Closed-form price and income elasticities, valid when `w` excludes price.
#[derive(Clone, Debug, PartialEq)]
pub struct ElasticityTable {
    /// Uncompensated elasticities; entry `(j, c)` is `∂ ln q_j / ∂ ln p_c`.
    pub marshallian: DMatrix<f64>,
    /// Compensated elasticities.
    pub hicksian: DMatrix<f64>,
    /// Income elasticities, identically one.
    pub income: Vec<f64>,
}

impl ElasticityTable {
    pub fn marshallian_own(&self, j: usize) -> f64 {
        self.marshallian[(j, j)]
    }

    pub fn hicksian_own(&self, j: usize) -> f64 {
        self.hicksian[(j, j)]
    }
}

pub fn elasticities(budget_shares: &[f64], sigma: f64) -> Result<ElasticityTable> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    if budget_shares.iter().any(|b| !(*b >= 0.0) || *b > 1.0 + 1e-12) {
        return Err(Error::invalid("budget shares must lie in [0, 1]"));
    }
    let total: f64 = budget_shares.iter().sum();
    if total > 1.0 + 1e-12 {
        return Err(Error::invalid(format!("budget shares sum to {total} > 1")));
    }
    let n = budget_shares.len();
    let b = budget_shares;
    let marshallian = DMatrix::from_fn(n, n, |j, c| {
        if j == c {
            -sigma + (sigma - 1.0) * b[j]
        } else {
            (sigma - 1.0) * b[c]
        }
    });
    let hicksian = DMatrix::from_fn(n, n, |j, c| {
        if j == c {
            -sigma * (1.0 - b[j])
        } else {
            sigma * b[c]
        }
    });
    Ok(ElasticityTable {
        marshallian,
        hicksian,
        income: vec![1.0; n],
    })
}

/// Individual-level shares with `χ_i = exp(x'β_i + ξ)` and no gate.
pub fn rc_individual_shares(products: &[ProductPoint], sigma_i: f64, beta_i: &[f64]) -> Result<Vec<f64>> {
    check_prices(products)?;
    let scores: Vec<Option<f64>> = products
        .iter()
        .map(|p| {
            if p.x.len() != beta_i.len() {
                return Err(Error::DimensionMismatch {
                    what: "x vs beta_i",
                    expected: beta_i.len(),
                    found: p.x.len(),
                });
            }
            Ok(Some(-sigma_i * p.log_price() + dot(&p.x, beta_i) + p.xi))
        })
        .collect::<Result<_>>()?;
    softmax_open(&scores)
}
