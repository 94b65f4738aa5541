use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::dataset::{MarketDataset, Observation};

/// How the price column is encoded in the file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PriceColumn {
    Raw(String),
    Log(String),
}

/// Binds CSV headers to dataset roles.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnManifest {
    pub market: String,
    pub product: String,
    pub share: String,
    pub price: PriceColumn,
    /// Outside-good flag column; absent means no numeraire rows.
    pub numeraire: Option<String>,
    /// Optional censoring flag, checked against `share == 0`.
    pub censored: Option<String>,
    pub promotion: Option<String>,
    /// Quantity column, carried for share construction but not loaded.
    pub quantity: Option<String>,
    pub x: Vec<String>,
    pub w: Vec<String>,
    /// Store-level demographics; loaded as trailing w columns.
    pub demographics: Vec<String>,
    /// Instruments, e.g. cost. May repeat exogenous x columns.
    pub z: Vec<String>,
}

fn numbered(header: &str, prefix: char) -> bool {
    let mut chars = header.chars();
    chars.next() == Some(prefix) && {
        let rest = chars.as_str();
        !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit())
    }
}

impl ColumnManifest {
    /// Manifest for files written by [`write_csv`].
    pub fn canonical(x: &[String], w: &[String], z: &[String], with_promotion: bool) -> Self {
        Self {
            market: "market_id".into(),
            product: "product_id".into(),
            share: "share".into(),
            price: PriceColumn::Raw("price".into()),
            numeraire: Some("is_numeraire".into()),
            censored: Some("censored".into()),
            promotion: with_promotion.then(|| "promotion".into()),
            quantity: None,
            x: x.to_vec(),
            w: w.to_vec(),
            demographics: Vec::new(),
            z: z.to_vec(),
        }
    }

    /// Canonical layout with blocks taken from `x<k>`, `w<k>`, `z<k>` headers.
    pub fn infer(headers: &[String]) -> Self {
        let pick = |p| headers.iter().filter(|h| numbered(h, p)).cloned().collect::<Vec<_>>();
        let has = |name: &str| headers.iter().any(|h| h == name);
        let mut m = Self::canonical(&pick('x'), &pick('w'), &pick('z'), has("promotion"));
        if !has("is_numeraire") {
            m.numeraire = None;
        }
        if !has("censored") {
            m.censored = None;
        }
        if !has("price") && has("log_price") {
            m.price = PriceColumn::Log("log_price".into());
        }
        m
    }

    /// Parses `key = value` lines; list roles take comma-separated headers.
    ///
    /// Keys: market, product, share, price | log_price, numeraire, censored,
    /// promotion, quantity, x, w, demographics, z (alias: instruments).
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Self {
            market: "market_id".into(),
            product: "product_id".into(),
            share: "share".into(),
            price: PriceColumn::Raw("price".into()),
            numeraire: None,
            censored: None,
            promotion: None,
            quantity: None,
            x: Vec::new(),
            w: Vec::new(),
            demographics: Vec::new(),
            z: Vec::new(),
        };
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("manifest line {}: expected key = value", n + 1)))?;
            let value = value.trim().to_string();
            let list = || {
                value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect::<Vec<_>>()
            };
            match key.trim() {
                "market" => m.market = value,
                "product" => m.product = value,
                "share" => m.share = value,
                "price" => m.price = PriceColumn::Raw(value),
                "log_price" => m.price = PriceColumn::Log(value),
                "numeraire" => m.numeraire = Some(value),
                "censored" => m.censored = Some(value),
                "promotion" => m.promotion = Some(value),
                "quantity" => m.quantity = Some(value),
                "x" => m.x = list(),
                "w" => m.w = list(),
                "demographics" => m.demographics = list(),
                "z" | "instruments" => m.z = list(),
                other => {
                    return Err(Error::Config(format!("manifest line {}: unknown role '{other}'", n + 1)));
                }
            }
        }
        m.check_roles()?;
        Ok(m)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn price_header(&self) -> &str {
        match &self.price {
            PriceColumn::Raw(h) | PriceColumn::Log(h) => h,
        }
    }

    /// Scalar roles must be distinct and must not double as x, w or z.
    /// x, w and z may share headers; promotion may also appear in x or w.
    pub fn check_roles(&self) -> Result<()> {
        let mut scalars: Vec<&str> = vec![&self.market, &self.product, &self.share, self.price_header()];
        scalars.extend(self.numeraire.as_deref());
        scalars.extend(self.censored.as_deref());
        scalars.extend(self.quantity.as_deref());
        let mut seen = HashSet::new();
        for s in &scalars {
            if !seen.insert(*s) {
                return Err(Error::Config(format!("header '{s}' bound to more than one role")));
            }
        }
        if let Some(p) = &self.promotion {
            if seen.contains(p.as_str()) {
                return Err(Error::Config(format!("promotion header '{p}' already bound to another role")));
            }
        }
        for block in [&self.x, &self.w, &self.demographics, &self.z] {
            if let Some(h) = block.iter().find(|h| seen.contains(h.as_str())) {
                return Err(Error::Config(format!("header '{h}' used both as a scalar role and a characteristic")));
            }
        }
        Ok(())
    }

    fn w_all(&self) -> Vec<String> {
        self.w.iter().chain(&self.demographics).cloned().collect()
    }
}

/// 17 significant digits, enough to round-trip every f64.
pub fn format_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.16e}")
    }
}

fn parse_flag(cell: &str) -> Option<bool> {
    match cell.trim() {
        "1" | "true" | "TRUE" | "True" => Some(true),
        "0" | "false" | "FALSE" | "False" | "" => Some(false),
        other => other.parse::<f64>().ok().map(|v| v != 0.0),
    }
}

pub fn load_csv(path: &Path, manifest: Option<&ColumnManifest>) -> Result<MarketDataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, manifest)
}

pub fn read_csv<R: std::io::Read>(reader: R, manifest: Option<&ColumnManifest>) -> Result<MarketDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let manifest = match manifest {
        Some(m) => m.clone(),
        None => ColumnManifest::infer(&headers),
    };
    manifest.check_roles()?;

    let find = |name: &str| headers.iter().position(|h| h == name);
    let mut missing = Vec::new();
    let mut col = |name: &str| match find(name) {
        Some(i) => i,
        None => {
            missing.push(format!("missing column '{name}'"));
            usize::MAX
        }
    };
    let market = col(&manifest.market);
    let product = col(&manifest.product);
    let share = col(&manifest.share);
    let price = col(manifest.price_header());
    let numeraire = manifest.numeraire.as_deref().map(&mut col);
    let censored = manifest.censored.as_deref().map(&mut col);
    let promotion = manifest.promotion.as_deref().map(&mut col);
    let w_all = manifest.w_all();
    let x: Vec<usize> = manifest.x.iter().map(|h| col(h)).collect();
    let w: Vec<usize> = w_all.iter().map(|h| col(h)).collect();
    let z: Vec<usize> = manifest.z.iter().map(|h| col(h)).collect();
    if !missing.is_empty() {
        return Err(Error::InvalidDataset(missing));
    }

    let mut ds = MarketDataset::new(manifest.x.clone(), w_all, manifest.z.clone(), numeraire.is_some());
    let mut problems = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 1;
        let cell = |c: usize| record.get(c).unwrap_or("");
        let mut number = |c: usize, allow_empty: bool| -> Option<f64> {
            let s = cell(c);
            if s.is_empty() && allow_empty {
                return None;
            }
            match s.parse::<f64>() {
                Ok(v) => Some(v),
                Err(_) => {
                    problems.push(format!("row {line}: non-numeric value '{s}' in column '{}'", headers[c]));
                    None
                }
            }
        };
        let share_v = number(share, false).unwrap_or(f64::NAN);
        let price_v = number(price, true).map(|p| match manifest.price {
            PriceColumn::Raw(_) => p,
            PriceColumn::Log(_) => p.exp(),
        });
        let xs: Vec<f64> = x.iter().map(|&c| number(c, false).unwrap_or(f64::NAN)).collect();
        let ws: Vec<f64> = w.iter().map(|&c| number(c, false).unwrap_or(f64::NAN)).collect();
        let zs: Vec<f64> = z.iter().map(|&c| number(c, true).unwrap_or(f64::NAN)).collect();
        let promo = promotion.and_then(|c| number(c, true));
        let is_numeraire = match numeraire {
            Some(c) => parse_flag(cell(c)).unwrap_or_else(|| {
                problems.push(format!("row {line}: invalid numeraire flag '{}'", cell(c)));
                false
            }),
            None => false,
        };
        let row = Observation {
            market_id: cell(market).to_string(),
            product_id: cell(product).to_string(),
            is_numeraire,
            share: share_v,
            price: if is_numeraire { price_v.or(Some(1.0)) } else { price_v },
            x: xs,
            w: ws,
            z: zs,
            promotion: promo,
        };
        if let Some(c) = censored {
            match parse_flag(cell(c)) {
                Some(flag) if flag != row.censored() => problems.push(format!(
                    "row {line}: censored flag {} disagrees with share {}",
                    u8::from(flag),
                    row.share
                )),
                None => problems.push(format!("row {line}: invalid censored flag '{}'", cell(c))),
                _ => {}
            }
        }
        ds.rows.push(row);
    }
    problems.extend(ds.violations());
    if !problems.is_empty() {
        return Err(Error::InvalidDataset(problems));
    }
    Ok(ds)
}

/// Canonical CSV: fixed column order and 17-significant-digit numbers, so
/// equal datasets always produce identical bytes.
pub fn write_csv(ds: &MarketDataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_csv_to(ds, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn write_csv_to<W: std::io::Write>(ds: &MarketDataset, out: W) -> Result<()> {
    let with_promotion = ds.rows.iter().any(|r| r.promotion.is_some());
    let mut wtr = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["market_id", "product_id", "is_numeraire", "censored", "share", "price"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if with_promotion {
        header.push("promotion".into());
    }
    header.extend(ds.x_names.iter().cloned());
    header.extend(ds.w_names.iter().cloned());
    header.extend(ds.z_names.iter().cloned());
    wtr.write_record(&header)?;
    for r in &ds.rows {
        let mut rec = vec![
            r.market_id.clone(),
            r.product_id.clone(),
            u8::from(r.is_numeraire).to_string(),
            u8::from(r.censored()).to_string(),
            format_f64(r.share),
            r.price.map(format_f64).unwrap_or_default(),
        ];
        if with_promotion {
            rec.push(r.promotion.map(format_f64).unwrap_or_default());
        }
        rec.extend(r.x.iter().chain(&r.w).chain(&r.z).map(|&v| format_f64(v)));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
