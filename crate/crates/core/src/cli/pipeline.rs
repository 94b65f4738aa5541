//! Data → first stage → second stage, shared by the `estimate` and
//! `density` commands.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::firststage::{
    klein_spady_fit, probit_fit, FirstStageFit, FirstStageMethod, KleinSpadyOptions, KsStandardErrors,
    ProbitOptions, SelectionSample,
};
use crate::io::{fill_missing_prices, MarketDataset};
use crate::secondstage::{
    heckman_fit, logit_fit, powell_fit, HeckmanCovariance, HeckmanOptions, PowellBandwidth, PowellCovariance,
    PowellOptions, SecondStageData, SecondStageFit, ZeroPolicy,
};

/// Default share imputed for zeros by `logit-impute`.
pub const DEFAULT_IMPUTED_SHARE: f64 = 1e-8;

/// Bandwidth constant used with `--empirical`.
pub const EMPIRICAL_BANDWIDTH_CONSTANT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    KsPowell,
    ProbitPowell,
    ProbitHeckman,
    LogitDrop,
    LogitImpute(f64),
}

impl Method {
    pub fn needs_probit(&self) -> bool {
        matches!(self, Method::KsPowell | Method::ProbitPowell | Method::ProbitHeckman)
    }

    /// Short first-stage label for the table header.
    pub fn first_stage_label(&self) -> &'static str {
        match self {
            Method::KsPowell => "K/S",
            Method::ProbitPowell | Method::ProbitHeckman => "Probit",
            Method::LogitDrop | Method::LogitImpute(_) => "-",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::KsPowell => f.write_str("ks-powell"),
            Method::ProbitPowell => f.write_str("probit-powell"),
            Method::ProbitHeckman => f.write_str("probit-heckman"),
            Method::LogitDrop => f.write_str("logit-drop"),
            Method::LogitImpute(v) => write!(f, "logit-impute:{v:e}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "ks-powell" => Ok(Method::KsPowell),
            "probit-powell" => Ok(Method::ProbitPowell),
            "probit-heckman" => Ok(Method::ProbitHeckman),
            "logit-drop" => Ok(Method::LogitDrop),
            "logit-impute" => Ok(Method::LogitImpute(DEFAULT_IMPUTED_SHARE)),
            _ => match s.strip_prefix("logit-impute:") {
                Some(v) => {
                    let value: f64 = v
                        .parse()
                        .map_err(|_| Error::Config(format!("bad imputed share '{v}' in method '{s}'")))?;
                    ZeroPolicy::Impute(value).validate()?;
                    Ok(Method::LogitImpute(value))
                }
                None => Err(Error::Config(format!(
                    "unknown method '{s}' (ks-powell | probit-powell | probit-heckman | logit-drop | logit-impute:VALUE)"
                ))),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeKind {
    Sandwich,
    Bootstrap,
}

impl FromStr for SeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sandwich" | "analytic" => Ok(SeKind::Sandwich),
            "bootstrap" => Ok(SeKind::Bootstrap),
            other => Err(Error::Config(format!("unknown standard-error kind '{other}' (sandwich | bootstrap)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimationSettings {
    /// First-stage bandwidth constant.
    pub c1: f64,
    /// Second-stage bandwidth constant.
    pub c2: f64,
    pub starts: usize,
    pub bootstrap: usize,
    pub seed: u64,
    /// First-stage w columns by name; all columns when `None`.
    pub w_columns: Option<Vec<String>>,
    /// w column whose coefficient is fixed to 1.
    pub normalize: Option<String>,
    pub ks_se: SeKind,
    pub powell_se: SeKind,
}

impl Default for EstimationSettings {
    fn default() -> Self {
        Self {
            c1: 1.0,
            c2: 1.0,
            starts: 100,
            bootstrap: 200,
            seed: 0,
            w_columns: None,
            normalize: None,
            ks_se: SeKind::Sandwich,
            powell_se: SeKind::Bootstrap,
        }
    }
}

/// First-stage data and fits, computed once per run.
pub struct FirstStages {
    /// `None` when only logit methods were requested.
    pub sample: Option<SelectionSample>,
    pub probit: Option<std::result::Result<FirstStageFit, String>>,
    pub ks: Option<std::result::Result<FirstStageFit, String>>,
    /// Set when no observation is censored, so neither first stage is
    /// estimable and Powell weights every pair equally.
    pub no_selection: Option<FirstStageFit>,
}

impl FirstStages {
    pub fn fit(
        ds: &MarketDataset,
        settings: &EstimationSettings,
        want_probit: bool,
        want_ks: bool,
    ) -> Result<Self> {
        let sample = selection_sample(ds, settings)?;
        let normalized = match &settings.normalize {
            Some(name) => Some(
                sample
                    .names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| Error::Config(format!("normalized column '{name}' is not a first-stage column")))?,
            ),
            None => None,
        };
        let d = sample.outcome.iter().filter(|&&y| y).count();
        if want_probit && d == sample.n() {
            let anchor = normalized.unwrap_or_else(|| sample.default_normalized_component());
            let mut fixed = FirstStageFit::fixed(&sample, &vec![0.0; sample.dim()], anchor)?;
            fixed
                .warnings
                .push("no censored observations: first stage not estimable, using a constant index".into());
            return Ok(Self {
                sample: Some(sample),
                probit: None,
                ks: None,
                no_selection: Some(fixed),
            });
        }

        let probit_options = ProbitOptions {
            normalized,
            ..ProbitOptions::default()
        };
        let probit = want_probit.then(|| probit_fit(&sample, &probit_options).map_err(|e| e.to_string()));
        let ks = match (&probit, want_ks) {
            (Some(Ok(p)), true) => {
                let options = KleinSpadyOptions {
                    normalized,
                    bandwidth_constant: settings.c1,
                    starts: settings.starts,
                    seed: settings.seed,
                    standard_errors: match settings.ks_se {
                        SeKind::Sandwich => KsStandardErrors::Sandwich,
                        SeKind::Bootstrap => KsStandardErrors::Bootstrap {
                            replications: settings.bootstrap,
                        },
                    },
                    ..KleinSpadyOptions::default()
                };
                Some(klein_spady_fit(&sample, p, &options).map_err(|e| e.to_string()))
            }
            (Some(Err(e)), true) => Some(Err(format!("probit start failed: {e}"))),
            _ => None,
        };
        Ok(Self {
            sample: Some(sample),
            probit,
            ks,
            no_selection: None,
        })
    }

    fn get(&self, method: FirstStageMethod) -> std::result::Result<&FirstStageFit, String> {
        if let Some(fixed) = &self.no_selection {
            return Ok(fixed);
        }
        let slot = match method {
            FirstStageMethod::KleinSpady => &self.ks,
            _ => &self.probit,
        };
        match slot {
            Some(Ok(fit)) => Ok(fit),
            Some(Err(e)) => Err(e.clone()),
            None => Err("first stage was not run".into()),
        }
    }
}

pub fn selection_sample(ds: &MarketDataset, settings: &EstimationSettings) -> Result<SelectionSample> {
    match &settings.w_columns {
        None => SelectionSample::all_columns(ds),
        Some(names) => {
            let cols = names
                .iter()
                .map(|n| {
                    ds.w_names
                        .iter()
                        .position(|w| w == n)
                        .ok_or_else(|| Error::Config(format!("unknown w column '{n}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            SelectionSample::from_dataset(ds, &cols)
        }
    }
}

/// One requested method's result.
pub struct MethodOutcome {
    pub method: Method,
    pub fit: std::result::Result<SecondStageFit, String>,
    /// False when the fit failed or its first stage did not converge.
    pub converged: bool,
}

pub struct EstimationRun {
    pub first_stages: FirstStages,
    pub outcomes: Vec<MethodOutcome>,
}

impl EstimationRun {
    pub fn all_converged(&self) -> bool {
        self.outcomes.iter().all(|o| o.converged)
    }
}

pub fn estimate(ds: &MarketDataset, methods: &[Method], settings: &EstimationSettings) -> Result<EstimationRun> {
    if methods.is_empty() {
        return Err(Error::Config("no estimation method requested".into()));
    }
    let want_probit = methods.iter().any(Method::needs_probit);
    let want_ks = methods.contains(&Method::KsPowell);
    let first_stages = if want_probit {
        FirstStages::fit(ds, settings, want_probit, want_ks)?
    } else {
        FirstStages {
            sample: None,
            probit: None,
            ks: None,
            no_selection: None,
        }
    };
    let outcomes = methods
        .iter()
        .map(|&method| {
            let fit = run_method(ds, &first_stages, method, settings);
            let first_converged = match method {
                Method::KsPowell => first_stages.get(FirstStageMethod::KleinSpady).is_ok_and(|f| f.report.converged),
                Method::ProbitPowell | Method::ProbitHeckman => {
                    first_stages.get(FirstStageMethod::Probit).is_ok_and(|f| f.report.converged)
                }
                _ => true,
            };
            MethodOutcome {
                method,
                converged: fit.is_ok() && first_converged,
                fit,
            }
        })
        .collect();
    Ok(EstimationRun { first_stages, outcomes })
}

fn run_method(
    ds: &MarketDataset,
    stages: &FirstStages,
    method: Method,
    settings: &EstimationSettings,
) -> std::result::Result<SecondStageFit, String> {
    match method {
        Method::KsPowell => powell(ds, stages.get(FirstStageMethod::KleinSpady)?, settings),
        Method::ProbitPowell => powell(ds, stages.get(FirstStageMethod::Probit)?, settings),
        Method::ProbitHeckman => {
            if stages.no_selection.is_some() {
                return Err("probit-heckman needs censored observations for its probit first stage".into());
            }
            let probit = stages.get(FirstStageMethod::Probit)?;
            let options = HeckmanOptions {
                covariance: HeckmanCovariance::GeneratedRegressor {
                    fallback_replications: settings.bootstrap,
                },
                probit: ProbitOptions {
                    normalized: Some(probit.normalized),
                    ..ProbitOptions::default()
                },
                seed: settings.seed,
            };
            let sample = stages.sample.as_ref().ok_or("first stage was not run")?;
            heckman_fit(ds, sample, probit, &options).map_err(|e| e.to_string())
        }
        Method::LogitDrop => logit_fit(ds, ZeroPolicy::Drop).map_err(|e| e.to_string()),
        Method::LogitImpute(v) => {
            let missing = ds.rows.iter().any(|r| !r.is_numeraire && r.price.is_none());
            let mut fit = if missing {
                let mut filled = ds.clone();
                let report = fill_missing_prices(&mut filled);
                let mut fit = logit_fit(&filled, ZeroPolicy::Impute(v)).map_err(|e| e.to_string())?;
                fit.warnings.push(format!(
                    "filled {} missing prices from other markets; {} rows had no donor",
                    report.filled.len(),
                    report.unfilled.len()
                ));
                fit
            } else {
                logit_fit(ds, ZeroPolicy::Impute(v)).map_err(|e| e.to_string())?
            };
            fit.method = crate::secondstage::SecondStageMethod::LogitImpute(v);
            Ok(fit)
        }
    }
}

fn powell(
    ds: &MarketDataset,
    first: &FirstStageFit,
    settings: &EstimationSettings,
) -> std::result::Result<SecondStageFit, String> {
    let data = SecondStageData::uncensored(ds).map_err(|e| e.to_string())?;
    let by_row = first.index_by_row();
    let index = data
        .rows
        .iter()
        .map(|r| {
            by_row
                .get(r)
                .copied()
                .ok_or_else(|| format!("dataset row {} has no first-stage index", r + 1))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let options = PowellOptions {
        bandwidth: PowellBandwidth::Rule { constant: settings.c2 },
        covariance: match settings.powell_se {
            SeKind::Sandwich => PowellCovariance::Sandwich,
            SeKind::Bootstrap => PowellCovariance::Bootstrap {
                replications: settings.bootstrap,
            },
        },
        seed: settings.seed,
    };
    let mut fit = powell_fit(&data, &index, &options).map_err(|e| e.to_string())?;
    fit.first_stage = Some(first.method);
    fit.warnings.extend(first.warnings.iter().cloned());
    Ok(fit)
}
