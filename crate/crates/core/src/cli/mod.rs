//! Command-line front end: `simulate`, `estimate`, `density` and
//! `elasticities`.
//!
//! Every command writes CSV artifacts plus a plain-text summary into the
//! output directory and echoes the summary to stdout. Settings come from
//! flags, then an optional `--config` TOML file, then built-in defaults.

pub mod config;
pub mod pipeline;
pub mod report;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::density::{estimate_eta_cdf, sample_eta, standardized_kolmogorov, write_density_csv, write_draws_csv};
use crate::error::{Error, Result};
use crate::io::{format_f64, load_csv, write_csv, ColumnManifest, MarketDataset};
use crate::model::elasticities;
use crate::sim::{simulate, write_latent_csv, EtaLaw, SampleSize, SimConfig};

pub use config::{FileConfig, OUTPUT_DIR_ENV};
pub use pipeline::{estimate, EstimationRun, EstimationSettings, Method, SeKind};

#[derive(Clone, Debug, Parser)]
#[command(name = "cesdemand", version, about = "CES demand estimation with zero market shares")]
pub struct Cli {
    /// TOML file with default settings; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Master random seed (default: 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (env: CESDEMAND_OUTPUT_DIR).
    #[arg(long, short = 'o', global = true)]
    pub output_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Subcommand)]
pub enum Command {
    /// Simulate markets from the calibrated Monte Carlo design.
    Simulate(SimulateArgs),
    /// Estimate the price and characteristic coefficients.
    Estimate(EstimateArgs),
    /// Recover the distribution of the extensive-margin error.
    Density(DensityArgs),
    /// Price and income elasticities from budget shares.
    Elasticities(ElasticityArgs),
}

#[derive(Clone, Debug, Default, Args)]
pub struct SimulateArgs {
    /// Total inside-good observations.
    #[arg(long, conflicts_with = "markets")]
    pub products: Option<usize>,
    /// Number of markets.
    #[arg(long)]
    pub markets: Option<usize>,
    /// Gate intercept; large values open every gate.
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    /// ev | gaussian | logistic.
    #[arg(long)]
    pub eta_law: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub xi_loading: Option<f64>,
    #[arg(long)]
    pub xi_noise: Option<f64>,
    /// Blank out prices of zero-share products.
    #[arg(long)]
    pub mask_censored_prices: bool,
}

#[derive(Clone, Debug, Default, Args)]
pub struct DataArgs {
    /// Dataset CSV.
    #[arg(long, short = 'i')]
    pub input: Option<PathBuf>,
    /// key = value file binding CSV headers to roles.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Args)]
pub struct FirstStageArgs {
    /// First-stage bandwidth constant.
    #[arg(long)]
    pub c1: Option<f64>,
    /// Use the empirical bandwidth constant 0.5 wherever none is given.
    #[arg(long)]
    pub empirical: bool,
    /// Klein-Spady multistart count.
    #[arg(long)]
    pub starts: Option<usize>,
    /// Bootstrap replications.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// First-stage w columns (default: all).
    #[arg(long, value_delimiter = ',')]
    pub w_columns: Option<Vec<String>>,
    /// w column whose coefficient is normalized to 1.
    #[arg(long)]
    pub normalize: Option<String>,
    /// Klein-Spady standard errors: sandwich | bootstrap.
    #[arg(long)]
    pub ks_se: Option<String>,
}

#[derive(Clone, Debug, Default, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub first_stage: FirstStageArgs,
    /// ks-powell | probit-powell | probit-heckman | logit-drop | logit-impute:VALUE
    #[arg(long, short = 'm', value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Second-stage bandwidth constant.
    #[arg(long)]
    pub c2: Option<f64>,
    /// Powell standard errors: bootstrap | sandwich.
    #[arg(long)]
    pub powell_se: Option<String>,
}

#[derive(Clone, Debug, Default, Args)]
pub struct DensityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub first_stage: FirstStageArgs,
    /// ks | probit.
    #[arg(long)]
    pub first_stage_method: Option<String>,
    /// Grid points for the cdf estimate.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Number of draws from the estimated law.
    #[arg(long)]
    pub draws: Option<usize>,
    /// Location of the draws.
    #[arg(long, allow_negative_numbers = true)]
    pub mean: Option<f64>,
    /// Variance of the draws.
    #[arg(long)]
    pub variance: Option<f64>,
    /// Law to compare against after standardization: ev | gaussian | logistic.
    #[arg(long)]
    pub reference: Option<String>,
}

#[derive(Clone, Debug, Default, Args)]
pub struct ElasticityArgs {
    /// Budget shares, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub shares: Option<Vec<f64>>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Take shares from this market of `--input` instead.
    #[arg(long)]
    pub market: Option<String>,
    #[command(flatten)]
    pub data: DataArgs,
}

/// What a command produced.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub summary: String,
    pub files: Vec<PathBuf>,
    /// False when some requested method failed or did not converge.
    pub success: bool,
}

pub const DEFAULT_DRAWS: usize = 10_000;
pub const DEFAULT_DRAW_MEAN: f64 = 0.0;
pub const DEFAULT_DRAW_VARIANCE: f64 = 4.0;

/// Runs one parsed command inside a dedicated worker pool.
pub fn run(cli: &Cli) -> Result<RunReport> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let env = std::env::var(OUTPUT_DIR_ENV).ok();
    let out_dir = config::resolve_output_dir(cli.output_dir.as_deref(), env.as_deref(), file.output_dir.as_deref());
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let workers = cli
        .workers
        .or(file.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    pool.install(|| match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, &file, seed, &out_dir),
        Command::Estimate(a) => cmd_estimate(a, &file, seed, &out_dir),
        Command::Density(a) => cmd_density(a, &file, seed, &out_dir),
        Command::Elasticities(a) => cmd_elasticities(a, &file, &out_dir),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn sim_config(args: &SimulateArgs, file: &FileConfig, seed: u64) -> Result<SimConfig> {
    let mut cfg = SimConfig::calibrated(seed);
    cfg.size = match (args.products, args.markets, file.products, file.markets) {
        (Some(n), _, _, _) => SampleSize::Products(n),
        (None, Some(t), _, _) => SampleSize::Markets(t),
        (None, None, Some(_), Some(_)) => {
            return Err(Error::Config("set either products or markets, not both".into()))
        }
        (None, None, Some(n), None) => SampleSize::Products(n),
        (None, None, None, Some(t)) => SampleSize::Markets(t),
        (None, None, None, None) => cfg.size,
    };
    if let Some(g) = args.gamma.or(file.gamma) {
        cfg.params.gamma = g;
    }
    if let Some(law) = args.eta_law.as_ref().or(file.eta_law.as_ref()) {
        cfg.eta_law = EtaLaw::parse(law)?;
    }
    if let Some(l) = args.xi_loading.or(file.xi_loading) {
        cfg.xi.loading = l;
    }
    if let Some(n) = args.xi_noise.or(file.xi_noise) {
        cfg.xi.noise = n;
    }
    cfg.mask_censored_prices = args.mask_censored_prices || file.mask_censored_prices.unwrap_or(false);
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_simulate(args: &SimulateArgs, file: &FileConfig, seed: u64, out_dir: &Path) -> Result<RunReport> {
    let cfg = sim_config(args, file, seed)?;
    let out = simulate(&cfg)?;
    let data_path = out_dir.join("simulated.csv");
    let latent_path = out_dir.join("latent.csv");
    let summary_path = out_dir.join("simulate.txt");
    write_csv(&out.dataset, &data_path)?;
    write_latent_csv(&out.latent, &latent_path)?;
    let ds = &out.dataset;
    let summary = format!(
        "markets {}\nN {}\nD {}\ncensoring rate {:.4}\nprice floor hits {}\nseed {seed}\n",
        ds.n_markets(),
        ds.n_products(),
        ds.n_uncensored(),
        out.censoring_rate(),
        out.price_floor_hits,
    );
    write_text(&summary_path, &summary)?;
    Ok(RunReport {
        summary,
        files: vec![data_path, latent_path, summary_path],
        success: true,
    })
}

fn load_dataset(data: &DataArgs, file: &FileConfig) -> Result<MarketDataset> {
    let input = data
        .input
        .as_ref()
        .or(file.input.as_ref())
        .ok_or_else(|| Error::Config("no input dataset (--input)".into()))?;
    let manifest = match data.manifest.as_ref().or(file.manifest.as_ref()) {
        Some(p) => Some(ColumnManifest::from_file(p)?),
        None => None,
    };
    let ds = load_csv(input, manifest.as_ref())?;
    ds.validate()?;
    Ok(ds)
}

pub fn estimation_settings(
    first: &FirstStageArgs,
    c2: Option<f64>,
    powell_se: Option<&String>,
    file: &FileConfig,
    seed: u64,
) -> Result<EstimationSettings> {
    let defaults = EstimationSettings::default();
    let empirical = first.empirical || file.empirical.unwrap_or(false);
    let fallback = if empirical {
        pipeline::EMPIRICAL_BANDWIDTH_CONSTANT
    } else {
        defaults.c1
    };
    let parse_se = |flag: Option<&String>, cfg: Option<&String>, default: SeKind| -> Result<SeKind> {
        flag.or(cfg).map_or(Ok(default), |s| s.parse())
    };
    let settings = EstimationSettings {
        c1: first.c1.or(file.c1).unwrap_or(fallback),
        c2: c2.or(file.c2).unwrap_or(fallback),
        starts: first.starts.or(file.starts).unwrap_or(defaults.starts),
        bootstrap: first.bootstrap.or(file.bootstrap).unwrap_or(defaults.bootstrap),
        seed,
        w_columns: first.w_columns.clone().or_else(|| file.w_columns.clone()),
        normalize: first.normalize.clone().or_else(|| file.normalize.clone()),
        ks_se: parse_se(first.ks_se.as_ref(), file.ks_se.as_ref(), defaults.ks_se)?,
        powell_se: parse_se(powell_se, file.powell_se.as_ref(), defaults.powell_se)?,
    };
    for (name, c) in [("c1", settings.c1), ("c2", settings.c2)] {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Config(format!("{name} must be positive, got {c}")));
        }
    }
    if settings.starts == 0 {
        return Err(Error::Config("starts must be at least 1".into()));
    }
    Ok(settings)
}

pub fn cmd_estimate(args: &EstimateArgs, file: &FileConfig, seed: u64, out_dir: &Path) -> Result<RunReport> {
    let names = args
        .methods
        .clone()
        .or_else(|| file.methods.clone())
        .ok_or_else(|| Error::Config("no estimation method requested (--methods)".into()))?;
    let methods = names.iter().map(|s| s.parse()).collect::<Result<Vec<Method>>>()?;
    let settings = estimation_settings(&args.first_stage, args.c2, args.powell_se.as_ref(), file, seed)?;
    let ds = load_dataset(&args.data, file)?;
    let run = estimate(&ds, &methods, &settings)?;

    let mut summary = report::second_stage_table(&run);
    let mut files = Vec::new();
    if let Some(first) = report::first_stage_table(&run) {
        summary.push('\n');
        summary.push_str(&first);
        let path = out_dir.join("first_stage.csv");
        write_with(&path, |b| report::write_first_stage_csv(&run, b))?;
        files.push(path);
    }
    let csv_path = out_dir.join("estimates.csv");
    write_with(&csv_path, |b| report::write_second_stage_csv(&run, b))?;
    let text_path = out_dir.join("estimates.txt");
    write_text(&text_path, &summary)?;
    files.splice(0..0, [csv_path, text_path]);
    Ok(RunReport {
        summary,
        files,
        success: run.all_converged(),
    })
}

pub fn cmd_density(args: &DensityArgs, file: &FileConfig, seed: u64, out_dir: &Path) -> Result<RunReport> {
    let settings = estimation_settings(&args.first_stage, None, None, file, seed)?;
    let use_ks = match args
        .first_stage_method
        .as_deref()
        .or(file.first_stage.as_deref())
        .unwrap_or("ks")
        .to_ascii_lowercase()
        .as_str()
    {
        "ks" | "klein-spady" | "k/s" => true,
        "probit" => false,
        other => return Err(Error::Config(format!("unknown first stage '{other}' (ks | probit)"))),
    };
    let ds = load_dataset(&args.data, file)?;
    let stages = pipeline::FirstStages::fit(&ds, &settings, true, use_ks)?;
    if stages.no_selection.is_some() {
        return Err(Error::DegenerateDensity("no censored observations, so the gate law is not identified".into()));
    }
    let slot = if use_ks { &stages.ks } else { &stages.probit };
    let fit = match slot {
        Some(Ok(f)) => f,
        Some(Err(e)) => return Err(Error::Estimation(e.clone())),
        None => return Err(Error::Estimation("first stage was not run".into())),
    };

    let grid = args.grid.or(file.grid).unwrap_or(crate::density::DEFAULT_GRID);
    let count = args.draws.or(file.draws).unwrap_or(DEFAULT_DRAWS);
    let mean = args.mean.or(file.mean).unwrap_or(DEFAULT_DRAW_MEAN);
    let variance = args.variance.or(file.variance).unwrap_or(DEFAULT_DRAW_VARIANCE);
    let est = estimate_eta_cdf(fit, grid)?;
    let draws = sample_eta(&est, count, mean, variance, seed)?;

    let density_path = out_dir.join("eta_density.csv");
    let draws_path = out_dir.join("eta_draws.csv");
    let summary_path = out_dir.join("density.txt");
    write_density_csv(&est, &density_path)?;
    write_draws_csv(&draws, &draws_path)?;

    let mut summary = format!(
        "first stage {}\ngrid points {}\nbandwidth {}\ncoverage {:.4}\nestimated mean {}\nestimated variance {}\ndraws {} (mean {mean}, variance {variance})\n",
        if use_ks { "K/S" } else { "Probit" },
        est.grid.len(),
        format_f64(est.bandwidth),
        est.coverage,
        format_f64(est.moments.0),
        format_f64(est.moments.1),
        draws.len(),
    );
    if let Some(name) = args.reference.as_ref().or(file.reference.as_ref()) {
        let law = EtaLaw::parse(name)?;
        let sd = law.std_dev();
        let d = standardized_kolmogorov(&est, |u| law.cdf(u * sd));
        summary.push_str(&format!("standardized Kolmogorov distance to {name} {d:.4}\n"));
    }
    for w in &fit.warnings {
        summary.push_str(&format!("warning: {w}\n"));
    }
    write_text(&summary_path, &summary)?;
    Ok(RunReport {
        summary,
        files: vec![density_path, draws_path, summary_path],
        success: fit.report.converged,
    })
}

fn market_shares(ds: &MarketDataset, market: &str) -> Result<(Vec<String>, Vec<f64>)> {
    let rows: Vec<_> = ds.rows.iter().filter(|r| r.market_id == market).collect();
    if rows.is_empty() {
        return Err(Error::Config(format!("market '{market}' not found")));
    }
    Ok((rows.iter().map(|r| r.product_id.clone()).collect(), rows.iter().map(|r| r.share).collect()))
}

pub fn cmd_elasticities(args: &ElasticityArgs, file: &FileConfig, out_dir: &Path) -> Result<RunReport> {
    let sigma = args
        .sigma
        .or(file.sigma)
        .ok_or_else(|| Error::Config("elasticities need --sigma".into()))?;
    let (labels, shares) = match (args.shares.clone().or_else(|| file.shares.clone()), args.market.as_ref().or(file.market.as_ref())) {
        (Some(b), None) => ((1..=b.len()).map(|k| format!("g{k}")).collect(), b),
        (None, Some(m)) => market_shares(&load_dataset(&args.data, file)?, m)?,
        (Some(_), Some(_)) => return Err(Error::Config("give either --shares or --market, not both".into())),
        (None, None) => return Err(Error::Config("elasticities need --shares or --market".into())),
    };
    let table = elasticities(&shares, sigma)?;

    let csv_path = out_dir.join("elasticities.csv");
    write_with(&csv_path, |buf| {
        let mut wtr = csv::Writer::from_writer(buf);
        let mut header = vec!["matrix".to_string(), "product".to_string(), "budget_share".to_string()];
        header.extend(labels.iter().cloned());
        header.push("income".into());
        wtr.write_record(&header)?;
        for (kind, m) in [("marshallian", &table.marshallian), ("hicksian", &table.hicksian)] {
            for (j, label) in labels.iter().enumerate() {
                let mut rec = vec![kind.to_string(), label.clone(), format_f64(shares[j])];
                rec.extend((0..labels.len()).map(|c| format_f64(m[(j, c)])));
                rec.push(format_f64(table.income[j]));
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    })?;

    let mut summary = format!("sigma {sigma}\n");
    for (j, label) in labels.iter().enumerate() {
        summary.push_str(&format!(
            "{label}: share {:.4}  own Marshallian {:.4}  own Hicksian {:.4}  income {}\n",
            shares[j],
            table.marshallian_own(j),
            table.hicksian_own(j),
            table.income[j]
        ));
    }
    let text_path = out_dir.join("elasticities.txt");
    write_text(&text_path, &summary)?;
    Ok(RunReport {
        summary,
        files: vec![csv_path, text_path],
        success: true,
    })
}
