use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::io::dataset::MarketDataset;

/// Potential market size per market.
#[derive(Clone, Debug, PartialEq)]
pub enum MarketSizeRule {
    /// Size given directly, e.g. from a column.
    Explicit(BTreeMap<String, f64>),
    /// `units_per_person × customers[market]`, e.g. ounces per shopper.
    PerCapita {
        units_per_person: f64,
        customers: BTreeMap<String, f64>,
    },
}

impl MarketSizeRule {
    pub fn size(&self, market: &str) -> Option<f64> {
        match self {
            MarketSizeRule::Explicit(sizes) => sizes.get(market).copied(),
            MarketSizeRule::PerCapita {
                units_per_person,
                customers,
            } => customers.get(market).map(|c| c * units_per_person),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantityRecord {
    pub market_id: String,
    pub product_id: String,
    pub quantity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShareConstruction {
    /// One share per input record, in input order.
    pub shares: Vec<f64>,
    /// Outside-good share per market.
    pub numeraire: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

/// `s_j = q_j / size_t`, outside share `1 − Σ_j s_j`.
pub fn construct_shares(records: &[QuantityRecord], rule: &MarketSizeRule) -> Result<ShareConstruction> {
    let mut totals: BTreeMap<String, f64> = BTreeMap::new();
    for r in records {
        if !(r.quantity >= 0.0) || !r.quantity.is_finite() {
            return Err(Error::invalid(format!(
                "quantity for ({}, {}) must be non-negative, got {}",
                r.market_id, r.product_id, r.quantity
            )));
        }
        *totals.entry(r.market_id.clone()).or_insert(0.0) += r.quantity;
    }
    let mut sizes: HashMap<&str, f64> = HashMap::new();
    let mut numeraire = BTreeMap::new();
    let mut warnings = Vec::new();
    for (market, &total) in &totals {
        let size = rule
            .size(market)
            .ok_or_else(|| Error::invalid(format!("no market size for market {market}")))?;
        if !(size > 0.0) || size < total {
            return Err(Error::InfeasibleMarketSize {
                market: market.clone(),
                size,
                total,
            });
        }
        let outside = 1.0 - total / size;
        if outside == 0.0 {
            warnings.push(format!("market {market}: outside share is zero; log share ratios are undefined"));
        }
        sizes.insert(market, size);
        numeraire.insert(market.clone(), outside);
    }
    let shares = records
        .iter()
        .map(|r| r.quantity / sizes[r.market_id.as_str()])
        .collect();
    Ok(ShareConstruction {
        shares,
        numeraire,
        warnings,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FillReport {
    /// Rows whose price was filled from donors.
    pub filled: Vec<usize>,
    /// Rows left without a price because no donor exists.
    pub unfilled: Vec<usize>,
}

/// Fills missing prices (and missing instrument cells) on censored rows
/// with the mean over other markets of the same product and promotion
/// status. Rows without donors keep `price = None`, which excludes them
/// from imputed-share estimation.
pub fn fill_missing_prices(ds: &mut MarketDataset) -> FillReport {
    #[derive(Default)]
    struct Pool {
        price_sum: f64,
        price_n: usize,
        z_sum: Vec<f64>,
        z_n: Vec<usize>,
        markets: Vec<String>,
    }
    let key = |r: &crate::io::Observation| (r.product_id.clone(), r.promotion.map(f64::to_bits));
    let dim_z = ds.dim_z();
    let mut pools: HashMap<(String, Option<u64>), Pool> = HashMap::new();
    for r in ds.rows.iter().filter(|r| !r.is_numeraire) {
        let Some(p) = r.price else { continue };
        let pool = pools.entry(key(r)).or_insert_with(|| Pool {
            z_sum: vec![0.0; dim_z],
            z_n: vec![0; dim_z],
            ..Default::default()
        });
        pool.price_sum += p;
        pool.price_n += 1;
        for (k, &z) in r.z.iter().enumerate() {
            if z.is_finite() {
                pool.z_sum[k] += z;
                pool.z_n[k] += 1;
            }
        }
        pool.markets.push(r.market_id.clone());
    }

    let mut report = FillReport::default();
    for (i, r) in ds.rows.iter_mut().enumerate() {
        if r.is_numeraire || !r.censored() || (r.price.is_some() && r.has_complete_instruments()) {
            continue;
        }
        // donors come from other markets only, so a row never fills itself
        let pool = pools.get(&key(r)).filter(|p| p.markets.iter().any(|m| *m != r.market_id));
        match pool {
            Some(pool) if pool.price_n > 0 => {
                if r.price.is_none() {
                    r.price = Some(pool.price_sum / pool.price_n as f64);
                }
                for k in 0..dim_z {
                    if !r.z[k].is_finite() && pool.z_n[k] > 0 {
                        r.z[k] = pool.z_sum[k] / pool.z_n[k] as f64;
                    }
                }
                report.filled.push(i);
            }
            _ => report.unfilled.push(i),
        }
    }
    report
}
