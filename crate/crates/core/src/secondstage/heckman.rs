use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::firststage::{
    probit_fit, probit_information, probit_scores, FirstStageFit, FirstStageMethod, ProbitOptions, SelectionSample,
};
use crate::io::MarketDataset;
use crate::numerics::linalg::{checked_inverse, symmetrize};
use crate::numerics::{inverse_mills, inverse_mills_derivative, stream_rng};

use super::{draw_covariance, robust_tsls, SecondStageData, SecondStageFit, SecondStageMethod};

/// Name of the selection-correction regressor.
pub const MILLS_NAME: &str = "inverse_mills";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeckmanCovariance {
    /// Delta-method correction for the estimated Probit index; falls back
    /// to the bootstrap when singular.
    GeneratedRegressor { fallback_replications: usize },
    /// Resample markets and refit both stages.
    Bootstrap { replications: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeckmanOptions {
    pub covariance: HeckmanCovariance,
    pub probit: ProbitOptions,
    pub seed: u64,
}

impl Default for HeckmanOptions {
    fn default() -> Self {
        Self {
            covariance: HeckmanCovariance::GeneratedRegressor {
                fallback_replications: 200,
            },
            probit: ProbitOptions::default(),
            seed: 0,
        }
    }
}

/// Share of variance of `target` explained by a least-squares fit on
/// `[1, x]`.
fn r_squared(target: &DVector<f64>, x: &DMatrix<f64>) -> f64 {
    let n = target.len();
    let design = DMatrix::from_fn(n, x.ncols() + 1, |i, c| if c == 0 { 1.0 } else { x[(i, c - 1)] });
    let Ok(inv) = checked_inverse(&(design.transpose() * &design), "design") else {
        return 1.0;
    };
    let fitted = &design * (inv * (design.transpose() * target));
    let mean = target.mean();
    let tss: f64 = target.iter().map(|t| (t - mean).powi(2)).sum();
    let rss: f64 = target.iter().zip(fitted.iter()).map(|(t, f)| (t - f).powi(2)).sum();
    if tss > 0.0 {
        1.0 - rss / tss
    } else {
        1.0
    }
}

struct Core {
    data: SecondStageData,
    coefficients: DVector<f64>,
    /// Generated-regressor covariance, if computable.
    covariance: Result<DMatrix<f64>>,
    warnings: Vec<String>,
}

fn sample_columns(ds: &MarketDataset, sample: &SelectionSample) -> Result<Vec<usize>> {
    sample
        .names
        .iter()
        .map(|n| {
            ds.w_names
                .iter()
                .position(|w| w == n)
                .ok_or_else(|| Error::invalid(format!("first-stage column {n} not in dataset")))
        })
        .collect()
}

fn core(ds: &MarketDataset, sample: &SelectionSample, probit: &FirstStageFit, analytic: bool) -> Result<Core> {
    let raw = probit
        .probit
        .as_ref()
        .filter(|_| probit.method == FirstStageMethod::Probit)
        .ok_or_else(|| Error::invalid("the inverse-Mills correction needs a Probit first stage"))?;
    let data = SecondStageData::uncensored(ds)?;
    data.check_identification()?;
    let position: HashMap<usize, usize> = sample.rows.iter().enumerate().map(|(k, &r)| (r, k)).collect();
    let n = data.n();
    let mut t = Vec::with_capacity(n);
    let mut wrow = Vec::with_capacity(n);
    for &row in &data.rows {
        let k = *position
            .get(&row)
            .ok_or_else(|| Error::invalid(format!("dataset row {} missing from the first-stage sample", row + 1)))?;
        let w: Vec<f64> = sample.w.row(k).iter().copied().collect();
        t.push(raw.index_at(&w));
        wrow.push(k);
    }
    let lambda = DVector::from_iterator(n, t.iter().map(|&v| inverse_mills(v)));
    let kr = data.r.ncols();
    let x = DMatrix::from_fn(n, kr + 1, |i, c| if c < kr { data.r[(i, c)] } else { lambda[i] });
    let base_q = data.instruments();
    let q = DMatrix::from_fn(n, base_q.ncols() + 1, |i, c| if c < base_q.ncols() { base_q[(i, c)] } else { lambda[i] });

    let mut warnings = Vec::new();
    let r2 = r_squared(&lambda, &data.r);
    if r2 > 0.99 {
        warnings.push(format!(
            "inverse Mills ratio is nearly collinear with price and x (R² = {r2:.4}); the exclusion restriction is weak"
        ));
    }
    let fit = robust_tsls(&data.y, &x, &q)?;
    let covariance = if analytic {
        generated_regressor_covariance(sample, &raw.coefficients, &fit, &t, &wrow, kr)
    } else {
        Err(Error::Estimation("not requested".into()))
    };
    let mut names = data.names.clone();
    names.push(MILLS_NAME.into());
    let mut data = data;
    data.names = names;
    Ok(Core {
        data,
        coefficients: fit.coefficients,
        covariance,
        warnings,
    })
}

/// `Σ_i φ_i φ_i'` with
/// `φ_i = (P'P)⁻¹ [P_i u_i 1{selected} − M H⁻¹ s_i]`, where `s_i` and `H`
/// are the Probit scores and information and
/// `M = Σ_selected P_i β_λ λ'(t_i) (1, w_i)'`.
fn generated_regressor_covariance(
    sample: &SelectionSample,
    coef: &[f64],
    fit: &super::TslsFit,
    t: &[f64],
    wrow: &[usize],
    kr: usize,
) -> Result<DMatrix<f64>> {
    let p = fit.coefficients.len();
    let kw = coef.len();
    let beta_lambda = fit.coefficients[kr];
    let mut m = DMatrix::zeros(p, kw);
    let mut wt = DVector::zeros(kw);
    for (i, &k) in wrow.iter().enumerate() {
        wt[0] = 1.0;
        for c in 1..kw {
            wt[c] = sample.w[(k, c - 1)];
        }
        let pi = fit.projected.row(i).transpose();
        m.ger(beta_lambda * inverse_mills_derivative(t[i]), &pi, &wt, 1.0);
    }
    let h_inv = checked_inverse(&probit_information(sample, coef), "probit information matrix")?;
    let scores = probit_scores(sample, coef);
    let correction = &m * h_inv; // p × kw
    let mut own = DMatrix::zeros(sample.n(), p);
    for (i, &k) in wrow.iter().enumerate() {
        let pu = fit.projected.row(i) * fit.residuals[i];
        let mut row = own.row_mut(k);
        row += pu;
    }
    let mut meat = DMatrix::zeros(p, p);
    for k in 0..sample.n() {
        let g = own.row(k).transpose() - &correction * scores.row(k).transpose();
        meat.ger(1.0, &g, &g, 1.0);
    }
    Ok(symmetrize(&(&fit.bread * symmetrize(&meat) * &fit.bread)))
}

fn bootstrap(
    ds: &MarketDataset,
    columns: &[usize],
    options: &HeckmanOptions,
    replications: usize,
) -> Result<DMatrix<f64>> {
    let n_markets = ds.n_markets();
    let mut draws = Vec::with_capacity(replications);
    for r in 0..replications {
        let mut rng = stream_rng(options.seed, 0x6865_0000 + r as u64);
        let picks: Vec<usize> = (0..n_markets).map(|_| rand::Rng::gen_range(&mut rng, 0..n_markets)).collect();
        let boot = ds.resample_markets(&picks);
        let run = || -> Result<DVector<f64>> {
            let sample = SelectionSample::from_dataset(&boot, columns)?;
            let probit = probit_fit(&sample, &options.probit)?;
            Ok(core(&boot, &sample, &probit, false)?.coefficients)
        };
        if let Ok(b) = run() {
            draws.push(b);
        }
    }
    Ok(symmetrize(&draw_covariance(&draws)?))
}

/// 2SLS of `ln(s_j / s_0)` on `[ln p, x, λ]` with instruments `[z, x, λ]`,
/// where `λ` is the inverse Mills ratio at the Probit index.
///
/// `sample` must be the (censored and uncensored) sample the Probit was
/// fitted on.
pub fn heckman_fit(
    ds: &MarketDataset,
    sample: &SelectionSample,
    probit: &FirstStageFit,
    options: &HeckmanOptions,
) -> Result<SecondStageFit> {
    let analytic = matches!(options.covariance, HeckmanCovariance::GeneratedRegressor { .. });
    let Core {
        data,
        coefficients,
        covariance,
        mut warnings,
    } = core(ds, sample, probit, analytic)?;
    let columns = sample_columns(ds, sample)?;
    let covariance = match (options.covariance, covariance) {
        (HeckmanCovariance::GeneratedRegressor { .. }, Ok(c)) => c,
        (HeckmanCovariance::GeneratedRegressor { fallback_replications }, Err(e)) => {
            warnings.push(format!("generated-regressor covariance failed ({e}); using the bootstrap"));
            bootstrap(ds, &columns, options, fallback_replications)?
        }
        (HeckmanCovariance::Bootstrap { replications }, _) => bootstrap(ds, &columns, options, replications)?,
    };
    Ok(SecondStageFit {
        method: SecondStageMethod::Heckman,
        first_stage: Some(FirstStageMethod::Probit),
        names: data.names.clone(),
        coefficients: coefficients.as_slice().to_vec(),
        covariance,
        n: data.n_total,
        d: data.n(),
        bandwidth: None,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, EtaLaw, SimConfig, XiSpec};

    fn run(cfg: &SimConfig, options: &HeckmanOptions) -> SecondStageFit {
        let out = simulate(cfg).unwrap();
        let sample = SelectionSample::all_columns(&out.dataset).unwrap();
        let probit = probit_fit(&sample, &ProbitOptions::default()).unwrap();
        heckman_fit(&out.dataset, &sample, &probit, options).unwrap()
    }

    fn gaussian(seed: u64, n: usize) -> SimConfig {
        let mut cfg = SimConfig::calibrated(seed).with_products(n);
        cfg.eta_law = EtaLaw::Gaussian;
        cfg
    }

    #[test]
    fn gaussian_selection_recovers_truth() {
        let fit = run(&gaussian(41, 5000), &HeckmanOptions::default());
        let truth = [-2.0, 1.0, -2.0, 1.5, 0.3, 0.2, 0.4];
        let se = fit.std_errors();
        for k in 0..truth.len() {
            assert!((fit.coefficients[k] - truth[k]).abs() < 3.0 * se[k], "{k}: {} ({})", fit.coefficients[k], se[k]);
        }
        assert_eq!(fit.names.last().map(String::as_str), Some(MILLS_NAME));
    }

    #[test]
    fn delta_method_close_to_bootstrap() {
        let cfg = gaussian(42, 3000);
        let analytic = run(&cfg, &HeckmanOptions::default());
        let boot = run(
            &cfg,
            &HeckmanOptions {
                covariance: HeckmanCovariance::Bootstrap { replications: 60 },
                ..Default::default()
            },
        );
        assert_eq!(analytic.coefficients, boot.coefficients);
        let (a, b) = (analytic.std_errors()[0], boot.std_errors()[0]);
        assert!((a / b - 1.0).abs() < 0.35, "{a} vs {b}");
    }

    #[test]
    fn no_dependence_gives_small_mills_t() {
        let mut small_t = 0;
        let reps = 20;
        for seed in 0..reps {
            let mut cfg = gaussian(100 + seed, 2000);
            cfg.xi = XiSpec { loading: 0.0, noise: 1.0 };
            let fit = run(&cfg, &HeckmanOptions::default());
            let k = fit.coefficients.len() - 1;
            let t = fit.coefficients[k] / fit.covariance[(k, k)].sqrt();
            if t.abs() < 2.0 {
                small_t += 1;
            }
        }
        assert!(small_t >= 17, "{small_t} of {reps}");
    }

    #[test]
    fn requires_probit_first_stage() {
        let out = simulate(&SimConfig::calibrated(43).with_products(300)).unwrap();
        let sample = SelectionSample::all_columns(&out.dataset).unwrap();
        let fixed = FirstStageFit::fixed(&sample, &vec![0.1; sample.dim()], 0).unwrap();
        assert!(heckman_fit(&out.dataset, &sample, &fixed, &HeckmanOptions::default()).is_err());
    }
}
