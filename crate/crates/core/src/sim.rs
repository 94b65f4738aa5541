//! Monte Carlo market generator.
//!
//! Each market draws two to five products with characteristics
//! `w = (w1, w2, w3, b1, b2, b3, w4)`, where `w1 ~ lognormal(0, 1)`,
//! `w2 ~ U(1, 5)`, `w3 ~ Poisson(3)`, `b·` are brand dummies and
//! `w4 ~ N(0, 1)` is excluded from `x = (w1, w2, w3, b1, b2, b3)`. Prices
//! follow the endogenous pricing rule [`price`], gates follow the quality
//! kernel and positive shares come from the CES share system with a
//! numeraire.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gumbel, LogNormal, Normal, Poisson, Uniform};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{format_f64, MarketDataset, Observation};
use crate::model::{gate_open, predicted_shares, ProductPoint, QualityKernelParams};
use crate::numerics::{stream_rng, SimRng};

const EULER_MASCHERONI: f64 = 0.577_215_664_901_532_9;

/// Number of x columns produced by the generator.
pub const DIM_X: usize = 6;
/// Number of w columns produced by the generator.
pub const DIM_W: usize = 7;

/// Law of the extensive-margin unobservable η, always centred at zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EtaLaw {
    /// Type-I extreme value (Gumbel) minus the Euler–Mascheroni constant.
    TypeOneExtremeValue,
    Gaussian,
    Logistic,
}

impl EtaLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            EtaLaw::TypeOneExtremeValue => {
                Gumbel::new(0.0, 1.0).expect("valid gumbel").sample(rng) - EULER_MASCHERONI
            }
            EtaLaw::Gaussian => rng.sample(rand_distr::StandardNormal),
            EtaLaw::Logistic => {
                let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                (u / (1.0 - u)).ln()
            }
        }
    }

    pub fn std_dev(&self) -> f64 {
        use std::f64::consts::PI;
        match self {
            EtaLaw::TypeOneExtremeValue => PI / 6f64.sqrt(),
            EtaLaw::Gaussian => 1.0,
            EtaLaw::Logistic => PI / 3f64.sqrt(),
        }
    }

    /// CDF of the centred law.
    pub fn cdf(&self, v: f64) -> f64 {
        match self {
            EtaLaw::TypeOneExtremeValue => (-(-(v + EULER_MASCHERONI)).exp()).exp(),
            EtaLaw::Gaussian => crate::numerics::normal_cdf(v),
            EtaLaw::Logistic => 1.0 / (1.0 + (-v).exp()),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "ev" | "gumbel" | "type1" | "type-1-ev" | "extreme-value" => Ok(EtaLaw::TypeOneExtremeValue),
            "gaussian" | "normal" => Ok(EtaLaw::Gaussian),
            "logistic" => Ok(EtaLaw::Logistic),
            other => Err(Error::Config(format!("unknown eta law '{other}' (ev | gaussian | logistic)"))),
        }
    }
}

/// `ξ = loading · η / sd(η) + noise · N(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XiSpec {
    pub loading: f64,
    pub noise: f64,
}

impl Default for XiSpec {
    fn default() -> Self {
        Self {
            loading: 0.5,
            noise: 0.5,
        }
    }
}

/// How many rows to generate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleSize {
    /// Draw markets until this many inside-good rows exist; the last market
    /// is truncated.
    Products(usize),
    Markets(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub size: SampleSize,
    /// Inclusive range of inside goods per market.
    pub products_per_market: (usize, usize),
    pub params: QualityKernelParams,
    pub eta_law: EtaLaw,
    pub xi: XiSpec,
    /// Instruments are iid `U(low, high)`.
    pub instrument_range: (f64, f64),
    /// Brand categories; the first three get dummies, the rest are the base.
    pub brands: usize,
    /// Whether ξ enters the pricing rule; `false` makes price exogenous.
    pub price_includes_xi: bool,
    /// Record no price for zero-share rows.
    pub mask_censored_prices: bool,
    /// Prices below this are raised to it.
    pub price_floor: f64,
    pub seed: u64,
}

impl SimConfig {
    /// Default calibration: `σ = 2`, `α = 1`, `β = (1, −2, 1.5, 0.3, 0.2, 0.4)`,
    /// gate intercept 0 and `δ = (β, 0.1) / 4`.
    pub fn calibrated(seed: u64) -> Self {
        let beta = vec![1.0, -2.0, 1.5, 0.3, 0.2, 0.4];
        let mut delta: Vec<f64> = beta.iter().map(|b| b / 4.0).collect();
        delta.push(0.1 / 4.0);
        Self {
            size: SampleSize::Products(10_500),
            products_per_market: (2, 5),
            params: QualityKernelParams {
                sigma: 2.0,
                alpha: 1.0,
                beta,
                gamma: 0.0,
                delta,
            },
            eta_law: EtaLaw::TypeOneExtremeValue,
            xi: XiSpec::default(),
            instrument_range: (0.0, 5.0),
            brands: 4,
            price_includes_xi: true,
            mask_censored_prices: false,
            price_floor: 1e-3,
            seed,
        }
    }

    pub fn with_products(mut self, n: usize) -> Self {
        self.size = SampleSize::Products(n);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.params.beta.len() != DIM_X || self.params.delta.len() != DIM_W {
            return Err(Error::invalid(format!(
                "simulator needs {DIM_X} beta and {DIM_W} delta coefficients, got {} and {}",
                self.params.beta.len(),
                self.params.delta.len()
            )));
        }
        let (lo, hi) = self.products_per_market;
        if lo == 0 || lo > hi {
            return Err(Error::invalid(format!("invalid products-per-market range [{lo}, {hi}]")));
        }
        let (zl, zh) = self.instrument_range;
        if !(zl < zh) || !zl.is_finite() || !zh.is_finite() {
            return Err(Error::invalid(format!("invalid instrument range [{zl}, {zh})")));
        }
        if self.brands == 0 {
            return Err(Error::invalid("need at least one brand"));
        }
        if !(self.price_floor > 0.0) {
            return Err(Error::invalid("price floor must be positive"));
        }
        match self.size {
            SampleSize::Products(0) | SampleSize::Markets(0) => Err(Error::invalid("empty sample requested")),
            _ => Ok(()),
        }
    }

    pub fn x_names() -> Vec<String> {
        (1..=DIM_X).map(|k| format!("x{k}")).collect()
    }

    pub fn w_names() -> Vec<String> {
        (1..=DIM_W).map(|k| format!("w{k}")).collect()
    }

    pub fn z_names() -> Vec<String> {
        vec!["z1".into(), "z2".into()]
    }
}

/// Pricing rule `2 + (2z1 + 4z2 + 2x1 + x1x2 − x2x3 + 5x4 + 7x5 + 9x6 + 8ξ) / 50`.
pub fn price(z: [f64; 2], x: &[f64], xi: f64) -> f64 {
    2.0 + (2.0 * z[0] + 4.0 * z[1] + 2.0 * x[0] + x[0] * x[1] - x[1] * x[2]
        + 5.0 * x[3]
        + 7.0 * x[4]
        + 9.0 * x[5]
        + 8.0 * xi)
        / 50.0
}

/// Unobservables and gate of one inside good.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentRow {
    pub market_id: String,
    pub product_id: String,
    pub xi: f64,
    pub eta: f64,
    pub gate: bool,
    /// Price before masking.
    pub price: f64,
}

/// One generated market.
#[derive(Clone, Debug, PartialEq)]
pub struct SimMarket {
    pub market_id: String,
    /// Inside goods followed by the numeraire.
    pub products: Vec<ProductPoint>,
    pub z: Vec<[f64; 2]>,
    pub shares: Vec<f64>,
    pub gates: Vec<bool>,
    pub floor_hits: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOutput {
    pub dataset: MarketDataset,
    pub latent: Vec<LatentRow>,
    /// Prices raised to the floor.
    pub price_floor_hits: usize,
}

impl SimOutput {
    pub fn censoring_rate(&self) -> f64 {
        1.0 - self.dataset.n_uncensored() as f64 / self.dataset.n_products().max(1) as f64
    }
}

fn market_id(t: usize) -> String {
    format!("m{t:05}")
}

fn product_count(config: &SimConfig, rng: &mut SimRng) -> usize {
    let (lo, hi) = config.products_per_market;
    rng.gen_range(lo..=hi)
}

/// Market `t` with `count` inside goods, from its own random stream.
///
/// The product count is the first draw of the stream; passing a smaller
/// `count` truncates the market without changing the retained products.
pub fn draw_market(config: &SimConfig, t: usize, count: Option<usize>) -> Result<SimMarket> {
    let mut rng = stream_rng(config.seed, t as u64);
    let drawn = product_count(config, &mut rng);
    let count = count.unwrap_or(drawn);
    let lognormal = LogNormal::new(0.0, 1.0).expect("valid lognormal");
    let unif_w2 = Uniform::new(1.0, 5.0);
    let poisson = Poisson::new(3.0).expect("valid poisson");
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let unif_z = Uniform::new(config.instrument_range.0, config.instrument_range.1);
    let eta_sd = config.eta_law.std_dev();

    let mut products = Vec::with_capacity(count + 1);
    let mut zs = Vec::with_capacity(count);
    let mut floor_hits = 0;
    for _ in 0..count {
        let w1 = lognormal.sample(&mut rng);
        let w2 = unif_w2.sample(&mut rng);
        let w3: f64 = poisson.sample(&mut rng);
        let brand = rng.gen_range(0..config.brands);
        let dummies: [f64; 3] = std::array::from_fn(|k| if brand == k { 1.0 } else { 0.0 });
        let w4 = std_normal.sample(&mut rng);
        let eta = config.eta_law.sample(&mut rng);
        let xi = config.xi.loading * eta / eta_sd + config.xi.noise * std_normal.sample(&mut rng);
        let z = [unif_z.sample(&mut rng), unif_z.sample(&mut rng)];

        let x = vec![w1, w2, w3, dummies[0], dummies[1], dummies[2]];
        let mut w = x.clone();
        w.push(w4);
        let mut p = price(z, &x, if config.price_includes_xi { xi } else { 0.0 });
        if !(p > config.price_floor) {
            p = config.price_floor;
            floor_hits += 1;
        }
        products.push(ProductPoint { price: p, x, w, xi, eta });
        zs.push(z);
    }
    let gates = products
        .iter()
        .map(|p| gate_open(p, &config.params))
        .collect::<Result<Vec<_>>>()?;
    products.push(ProductPoint::numeraire(DIM_X, DIM_W));
    let shares = predicted_shares(&products, &config.params)?;
    Ok(SimMarket {
        market_id: market_id(t),
        products,
        z: zs,
        shares,
        gates,
        floor_hits,
    })
}

/// Product counts per market, truncated to hit the requested size.
fn market_sizes(config: &SimConfig) -> Vec<usize> {
    match config.size {
        SampleSize::Markets(t) => (0..t).map(|m| product_count(config, &mut stream_rng(config.seed, m as u64))).collect(),
        SampleSize::Products(n) => {
            let mut sizes = Vec::new();
            let mut total = 0;
            while total < n {
                let j = product_count(config, &mut stream_rng(config.seed, sizes.len() as u64)).min(n - total);
                sizes.push(j);
                total += j;
            }
            sizes
        }
    }
}

pub fn simulate(config: &SimConfig) -> Result<SimOutput> {
    config.validate()?;
    let sizes = market_sizes(config);
    let markets: Vec<SimMarket> = sizes
        .par_iter()
        .enumerate()
        .map(|(t, &j)| draw_market(config, t, Some(j)))
        .collect::<Result<_>>()?;

    let mut dataset = MarketDataset::new(SimConfig::x_names(), SimConfig::w_names(), SimConfig::z_names(), true);
    let mut latent = Vec::new();
    let mut price_floor_hits = 0;
    for m in &markets {
        price_floor_hits += m.floor_hits;
        let inside = m.products.len() - 1;
        for j in 0..inside {
            let p = &m.products[j];
            let product_id = format!("p{}", j + 1);
            let share = m.shares[j];
            let masked = config.mask_censored_prices && share == 0.0;
            dataset.rows.push(Observation {
                market_id: m.market_id.clone(),
                product_id: product_id.clone(),
                is_numeraire: false,
                share,
                price: (!masked).then_some(p.price),
                x: p.x.clone(),
                w: p.w.clone(),
                z: m.z[j].to_vec(),
                promotion: None,
            });
            latent.push(LatentRow {
                market_id: m.market_id.clone(),
                product_id,
                xi: p.xi,
                eta: p.eta,
                gate: m.gates[j],
                price: p.price,
            });
        }
        dataset.rows.push(Observation {
            market_id: m.market_id.clone(),
            product_id: "outside".into(),
            is_numeraire: true,
            share: m.shares[inside],
            price: Some(1.0),
            x: vec![0.0; DIM_X],
            w: vec![0.0; DIM_W],
            z: vec![0.0; 2],
            promotion: None,
        });
    }
    Ok(SimOutput {
        dataset,
        latent,
        price_floor_hits,
    })
}

/// Latent sidecar with columns `market_id, product_id, xi, eta, gate`.
pub fn write_latent_csv(latent: &[LatentRow], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut wtr = csv::Writer::from_writer(&mut buf);
        wtr.write_record(["market_id", "product_id", "xi", "eta", "gate"])?;
        for r in latent {
            wtr.write_record([
                r.market_id.clone(),
                r.product_id.clone(),
                format_f64(r.xi),
                format_f64(r.eta),
                u8::from(r.gate).to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io(path, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
