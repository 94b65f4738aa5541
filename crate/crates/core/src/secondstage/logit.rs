use crate::error::{Error, Result};
use crate::io::MarketDataset;

use super::{robust_tsls, SecondStageData, SecondStageFit, SecondStageMethod};

/// What to do with zero shares before taking logs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ZeroPolicy {
    Drop,
    /// Replace zero shares by this positive value.
    Impute(f64),
}

impl ZeroPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ZeroPolicy::Impute(v) if !(v > 0.0) || !v.is_finite() => {
                Err(Error::invalid(format!("imputed share must be positive, got {v}")))
            }
            _ => Ok(()),
        }
    }
}

/// Homogeneous-logit 2SLS of `ln(s_j / s_0)` on `[ln p, x]` with
/// instruments `[z, x]`, ignoring selection.
///
/// Under [`ZeroPolicy::Impute`], rows still lacking a price or an
/// instrument are excluded with a warning; run
/// [`fill_missing_prices`](crate::io::fill_missing_prices) first to fill
/// them where donors exist.
pub fn logit_fit(ds: &MarketDataset, policy: ZeroPolicy) -> Result<SecondStageFit> {
    policy.validate()?;
    let (data, method) = match policy {
        ZeroPolicy::Drop => (SecondStageData::uncensored(ds)?, SecondStageMethod::LogitDrop),
        ZeroPolicy::Impute(v) => (SecondStageData::imputed(ds, v)?, SecondStageMethod::LogitImpute(v)),
    };
    data.check_identification()?;
    let mut warnings = Vec::new();
    let expected = match policy {
        ZeroPolicy::Drop => data.n_uncensored,
        ZeroPolicy::Impute(_) => data.n_total,
    };
    if data.n() < expected {
        warnings.push(format!(
            "{} of {expected} rows excluded for a missing price or instrument",
            expected - data.n()
        ));
    }
    let fit = robust_tsls(&data.y, &data.r, &data.instruments())?;
    Ok(SecondStageFit {
        method,
        first_stage: None,
        names: data.names.clone(),
        coefficients: fit.coefficients.as_slice().to_vec(),
        covariance: fit.covariance,
        n: data.n(),
        // imputed zeros count as observed shares
        d: data.n(),
        bandwidth: None,
        warnings,
    })
}
