//! Intensive-margin estimation of `(−σ, β)` from log share ratios
//! `ln(π_j / π_0) = −σ ln p_j + x_j'β + ξ_j`.
//!
//! [`powell_fit`] differences pairs of uncensored observations with close
//! selection indices so the unknown selection term cancels;
//! [`heckman_fit`] adds the Probit inverse Mills ratio as a regressor;
//! [`logit_fit`] ignores selection and either drops or imputes zero shares.

mod heckman;
mod iv;
mod logit;
mod powell;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::firststage::FirstStageMethod;
use crate::io::MarketDataset;

pub use heckman::{heckman_fit, HeckmanCovariance, HeckmanOptions};
pub use iv::{robust_tsls, TslsFit};
pub use logit::{logit_fit, ZeroPolicy};
pub use powell::{
    pairwise_moments, pairwise_tsls, powell_covariance, powell_fit, PowellBandwidth, PowellCovariance,
    PowellOptions,
};

/// Name of the price regressor in every fit.
pub const PRICE_NAME: &str = "log_price";

/// Estimating-equation data: one row per product observation used.
#[derive(Clone, Debug, PartialEq)]
pub struct SecondStageData {
    /// Regressor names, price first.
    pub names: Vec<String>,
    pub z_names: Vec<String>,
    /// `ln(s_j / s_0)`.
    pub y: DVector<f64>,
    /// `[ln p, x]`.
    pub r: DMatrix<f64>,
    /// Excluded instruments.
    pub z: DMatrix<f64>,
    /// Dataset row of each observation.
    pub rows: Vec<usize>,
    /// Market group of each observation (index into `MarketDataset::markets`).
    pub market: Vec<usize>,
    pub n_markets: usize,
    /// Inside-good rows in the source dataset (N).
    pub n_total: usize,
    /// Uncensored inside-good rows in the source dataset (D).
    pub n_uncensored: usize,
}

impl SecondStageData {
    /// Rows with a positive share, price and complete instruments.
    pub fn uncensored(ds: &MarketDataset) -> Result<Self> {
        Self::build(ds, |r| (r.share > 0.0).then_some(r.share))
    }

    /// Every inside-good row with a price and complete instruments; zero
    /// shares are replaced by `value`. The outside share is left as is.
    pub fn imputed(ds: &MarketDataset, value: f64) -> Result<Self> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::invalid(format!("imputed share must be positive, got {value}")));
        }
        Self::build(ds, |r| Some(if r.share > 0.0 { r.share } else { value }))
    }

    fn build(ds: &MarketDataset, share_of: impl Fn(&crate::io::Observation) -> Option<f64>) -> Result<Self> {
        if !ds.outside_good {
            return Err(Error::InvalidDataset(vec![
                "log share ratios need an outside-good row in every market".into(),
            ]));
        }
        let outside = ds.outside_shares();
        let groups = ds.markets();
        let mut market_of = vec![0; ds.rows.len()];
        for (g, m) in groups.iter().enumerate() {
            for &i in &m.rows {
                market_of[i] = g;
            }
        }
        let missing: Vec<String> = groups
            .iter()
            .filter(|m| !m.rows.iter().any(|&i| ds.rows[i].is_numeraire && ds.rows[i].share > 0.0))
            .map(|m| format!("market {}: no outside-good share", m.market_id))
            .collect();
        if !missing.is_empty() {
            return Err(Error::InvalidDataset(missing));
        }

        let dx = ds.dim_x();
        let dz = ds.dim_z();
        let mut y = Vec::new();
        let mut r = Vec::new();
        let mut z = Vec::new();
        let mut rows = Vec::new();
        for (i, obs) in ds.rows.iter().enumerate() {
            if obs.is_numeraire || !obs.has_complete_instruments() {
                continue;
            }
            let (Some(share), Some(p), Some(s0)) = (share_of(obs), obs.price, outside[i]) else {
                continue;
            };
            y.push((share / s0).ln());
            r.push(p.ln());
            r.extend_from_slice(&obs.x);
            z.extend_from_slice(&obs.z);
            rows.push(i);
        }
        let n = rows.len();
        let mut names = vec![PRICE_NAME.to_string()];
        names.extend(ds.x_names.iter().cloned());
        Ok(Self {
            names,
            z_names: ds.z_names.clone(),
            y: DVector::from_vec(y),
            r: DMatrix::from_row_slice(n, dx + 1, &r),
            z: DMatrix::from_row_slice(n, dz, &z),
            market: rows.iter().map(|&i| market_of[i]).collect(),
            rows,
            n_markets: groups.len(),
            n_total: ds.n_products(),
            n_uncensored: ds.n_uncensored(),
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// `[z, x]`: excluded instruments plus the exogenous characteristics.
    pub fn instruments(&self) -> DMatrix<f64> {
        let n = self.n();
        let dz = self.z.ncols();
        let dx = self.r.ncols() - 1;
        DMatrix::from_fn(n, dz + dx, |i, c| if c < dz { self.z[(i, c)] } else { self.r[(i, c - dz + 1)] })
    }

    pub fn check_identification(&self) -> Result<()> {
        let q = self.z.ncols() + self.r.ncols() - 1;
        if self.z.ncols() == 0 {
            return Err(Error::UnderIdentified {
                instruments: q,
                regressors: self.r.ncols(),
            });
        }
        if self.n() <= q {
            return Err(Error::Estimation(format!("{} observations for {q} instruments", self.n())));
        }
        Ok(())
    }

    /// Copy restricted to the given observation positions (repeats allowed).
    pub fn subset(&self, picks: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            z_names: self.z_names.clone(),
            y: DVector::from_iterator(picks.len(), picks.iter().map(|&i| self.y[i])),
            r: self.r.select_rows(picks),
            z: self.z.select_rows(picks),
            rows: picks.iter().map(|&i| self.rows[i]).collect(),
            market: picks.iter().map(|&i| self.market[i]).collect(),
            n_markets: self.n_markets,
            n_total: self.n_total,
            n_uncensored: self.n_uncensored,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SecondStageMethod {
    Powell,
    Heckman,
    LogitDrop,
    LogitImpute(f64),
}

impl SecondStageMethod {
    pub fn label(&self) -> String {
        match self {
            SecondStageMethod::Powell => "powell".into(),
            SecondStageMethod::Heckman => "heckman".into(),
            SecondStageMethod::LogitDrop => "logit-drop".into(),
            SecondStageMethod::LogitImpute(v) => format!("logit-impute:{v:e}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SecondStageFit {
    pub method: SecondStageMethod,
    pub first_stage: Option<FirstStageMethod>,
    /// Coefficient names, price first.
    pub names: Vec<String>,
    /// `(−σ̂, β̂)`, plus any correction term last (Heckman's Mills ratio).
    pub coefficients: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// Effective sample size N: every inside good for the selection-corrected
    /// methods, the rows entering the regression for logit.
    pub n: usize,
    /// Positive-share rows entering the estimating equation D.
    pub d: usize,
    pub bandwidth: Option<f64>,
    pub warnings: Vec<String>,
}

impl SecondStageFit {
    pub fn price_coefficient(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn sigma_hat(&self) -> f64 {
        -self.coefficients[0]
    }

    /// Coefficients on x.
    pub fn beta_hat(&self, dim_x: usize) -> &[f64] {
        &self.coefficients[1..1 + dim_x]
    }

    pub fn std_errors(&self) -> Vec<f64> {
        (0..self.coefficients.len())
            .map(|k| self.covariance[(k, k)].max(0.0).sqrt())
            .collect()
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        let k = self.names.iter().position(|n| n == name)?;
        Some(self.covariance[(k, k)].max(0.0).sqrt())
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        let k = self.names.iter().position(|n| n == name)?;
        Some(self.coefficients[k])
    }
}

/// Sample covariance of bootstrap draws.
pub(crate) fn draw_covariance(draws: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    if draws.len() < 2 {
        return Err(Error::Estimation("fewer than two successful bootstrap replications".into()));
    }
    let p = draws[0].len();
    let m = draws.len() as f64;
    let mean = draws.iter().fold(DVector::zeros(p), |a, d| a + d) / m;
    Ok(draws
        .iter()
        .fold(DMatrix::zeros(p, p), |a, d| a + (d - &mean) * (d - &mean).transpose())
        / (m - 1.0))
}

/// Market counts for one block-bootstrap draw.
pub(crate) fn market_counts(n_markets: usize, rng: &mut crate::numerics::SimRng) -> Vec<f64> {
    use rand::Rng;
    let mut counts = vec![0.0; n_markets];
    for _ in 0..n_markets {
        counts[rng.gen_range(0..n_markets)] += 1.0;
    }
    counts
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::dataset_fixtures;

    #[test]
    fn uncensored_rows_and_ratios() {
        let ds = dataset_fixtures::small();
        let d = SecondStageData::uncensored(&ds).unwrap();
        assert_eq!(d.rows, vec![0, 3, 4]);
        assert!((d.y[0] - (0.2f64 / 0.8).ln()).abs() < 1e-15);
        assert_eq!(d.r[(0, 0)], 1.5f64.ln());
        assert_eq!((d.n_total, d.n_uncensored, d.n_markets), (4, 3, 2));
        assert_eq!(d.market, vec![0, 1, 1]);
    }

    #[test]
    fn imputation_keeps_outside_share() {
        let mut ds = dataset_fixtures::small();
        ds.rows[1].price = Some(2.5);
        let d = SecondStageData::imputed(&ds, 1e-8).unwrap();
        assert_eq!(d.rows, vec![0, 1, 3, 4]);
        assert!((d.y[1] - (1e-8f64 / 0.8).ln()).abs() < 1e-12);
        assert!(SecondStageData::imputed(&ds, 0.0).is_err());
    }

    #[test]
    fn missing_outside_good_is_rejected() {
        let mut ds = dataset_fixtures::small();
        ds.outside_good = false;
        assert!(matches!(SecondStageData::uncensored(&ds), Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn no_instruments_is_under_identified() {
        let mut ds = dataset_fixtures::small();
        ds.z_names.clear();
        for r in &mut ds.rows {
            r.z.clear();
        }
        let d = SecondStageData::uncensored(&ds).unwrap();
        assert!(matches!(d.check_identification(), Err(Error::UnderIdentified { .. })));
    }
}
