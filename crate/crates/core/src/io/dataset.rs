use std::collections::HashMap;

/// Share-sum tolerance for a market, numeraire included.
pub const SHARE_SUM_TOLERANCE: f64 = 1e-9;

/// One product (or outside-good) row in one market.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub market_id: String,
    pub product_id: String,
    pub is_numeraire: bool,
    pub share: f64,
    /// Raw price; `None` when not recorded (typically zero-sales rows).
    pub price: Option<f64>,
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    /// Instruments; a missing cell is stored as NaN.
    pub z: Vec<f64>,
    pub promotion: Option<f64>,
}

impl Observation {
    pub fn censored(&self) -> bool {
        !self.is_numeraire && self.share == 0.0
    }

    pub fn log_price(&self) -> Option<f64> {
        self.price.map(f64::ln)
    }

    pub fn has_complete_instruments(&self) -> bool {
        self.z.iter().all(|v| v.is_finite())
    }
}

/// Long-format product × market panel.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketDataset {
    pub x_names: Vec<String>,
    pub w_names: Vec<String>,
    pub z_names: Vec<String>,
    pub rows: Vec<Observation>,
    /// Whether each market carries an explicit outside-good row.
    pub outside_good: bool,
}

/// Row indices of one market, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketGroup {
    pub market_id: String,
    pub rows: Vec<usize>,
}

impl MarketDataset {
    pub fn new(x_names: Vec<String>, w_names: Vec<String>, z_names: Vec<String>, outside_good: bool) -> Self {
        Self {
            x_names,
            w_names,
            z_names,
            rows: Vec::new(),
            outside_good,
        }
    }

    pub fn dim_x(&self) -> usize {
        self.x_names.len()
    }

    pub fn dim_w(&self) -> usize {
        self.w_names.len()
    }

    pub fn dim_z(&self) -> usize {
        self.z_names.len()
    }

    /// Markets in order of first appearance.
    pub fn markets(&self) -> Vec<MarketGroup> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut groups: Vec<MarketGroup> = Vec::new();
        for (i, row) in self.rows.iter().enumerate() {
            let slot = *index.entry(row.market_id.as_str()).or_insert_with(|| {
                groups.push(MarketGroup {
                    market_id: row.market_id.clone(),
                    rows: Vec::new(),
                });
                groups.len() - 1
            });
            groups[slot].rows.push(i);
        }
        groups
    }

    /// Indices of inside-good rows.
    pub fn product_rows(&self) -> Vec<usize> {
        (0..self.rows.len()).filter(|&i| !self.rows[i].is_numeraire).collect()
    }

    /// Number of inside-good rows, N.
    pub fn n_products(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_numeraire).count()
    }

    /// Number of inside-good rows with a positive share, D.
    pub fn n_uncensored(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_numeraire && !r.censored()).count()
    }

    pub fn n_markets(&self) -> usize {
        self.markets().len()
    }

    /// Outside-good share for every row (the share of its market's numeraire).
    ///
    /// `None` for rows whose market has no numeraire.
    pub fn outside_shares(&self) -> Vec<Option<f64>> {
        let mut by_market: HashMap<&str, f64> = HashMap::new();
        for row in self.rows.iter().filter(|r| r.is_numeraire) {
            by_market.insert(row.market_id.as_str(), row.share);
        }
        self.rows
            .iter()
            .map(|r| by_market.get(r.market_id.as_str()).copied())
            .collect()
    }

    /// Indices `k` of w columns that duplicate no x column.
    pub fn excluded_w_columns(&self) -> Vec<usize> {
        let products: Vec<&Observation> = self.rows.iter().filter(|r| !r.is_numeraire).collect();
        (0..self.dim_w())
            .filter(|&k| {
                !(0..self.dim_x()).any(|c| products.iter().all(|r| r.w[k] == r.x[c]))
            })
            .collect()
    }

    /// Every violated invariant, with 1-based data row numbers.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut seen: HashMap<(&str, &str), usize> = HashMap::new();
        for (i, row) in self.rows.iter().enumerate() {
            let line = i + 1;
            if let Some(first) = seen.insert((&row.market_id, &row.product_id), line) {
                out.push(format!(
                    "row {line}: duplicate (market, product) key ({}, {}) first seen at row {first}",
                    row.market_id, row.product_id
                ));
            }
            if !(0.0..=1.0).contains(&row.share) {
                out.push(format!("row {line}: share {} outside [0, 1]", row.share));
            }
            if row.x.len() != self.dim_x() || row.w.len() != self.dim_w() || row.z.len() != self.dim_z() {
                out.push(format!("row {line}: characteristic block lengths disagree with header"));
                continue;
            }
            if row.x.iter().chain(&row.w).any(|v| !v.is_finite()) {
                out.push(format!("row {line}: non-finite x or w value"));
            }
            match row.price {
                Some(p) if !(p > 0.0) || !p.is_finite() => {
                    out.push(format!("row {line}: price {p} is not positive"));
                }
                None if !row.censored() => {
                    out.push(format!("row {line}: price missing on a row with positive share"));
                }
                _ => {}
            }
            if row.is_numeraire {
                if row.price != Some(1.0) || row.x.iter().any(|&v| v != 0.0) {
                    out.push(format!("row {line}: numeraire must have price 1 and x = 0"));
                }
                if !(row.share > 0.0) {
                    out.push(format!("row {line}: numeraire share must be positive"));
                }
            }
        }

        for market in self.markets() {
            let numeraires = market.rows.iter().filter(|&&i| self.rows[i].is_numeraire).count();
            if self.outside_good && numeraires != 1 {
                out.push(format!(
                    "market {}: expected exactly one numeraire row, found {numeraires}",
                    market.market_id
                ));
            }
            if !self.outside_good && numeraires != 0 {
                out.push(format!("market {}: numeraire row present with outside-good mode off", market.market_id));
            }
            let total: f64 = market.rows.iter().map(|&i| self.rows[i].share).sum();
            if (total - 1.0).abs() > SHARE_SUM_TOLERANCE {
                out.push(format!("market {}: shares sum to {total}, expected 1", market.market_id));
            }
        }

        if self.dim_w() > 0 && self.excluded_w_columns().is_empty() {
            out.push("exclusion restriction: every w column duplicates an x column".into());
        }
        out
    }

    pub fn validate(&self) -> crate::Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(crate::Error::InvalidDataset(v))
        }
    }

    /// Copy with only the listed markets, in the given order; a market may
    /// repeat, in which case its ids get a `#k` suffix to stay unique.
    pub fn resample_markets(&self, picks: &[usize]) -> MarketDataset {
        let groups = self.markets();
        let mut counts: HashMap<usize, usize> = HashMap::new();
        let mut out = MarketDataset::new(
            self.x_names.clone(),
            self.w_names.clone(),
            self.z_names.clone(),
            self.outside_good,
        );
        for &g in picks {
            let copy = counts.entry(g).or_insert(0);
            for &i in &groups[g].rows {
                let mut row = self.rows[i].clone();
                if *copy > 0 {
                    row.market_id = format!("{}#{}", row.market_id, copy);
                }
                out.rows.push(row);
            }
            *copy += 1;
        }
        out
    }
}
