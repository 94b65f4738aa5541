#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ces_demand::cli::{run, Cli, RunReport};

pub const WEEK_STORES: usize = 73;
pub const WEEK_N: usize = 4356;
pub const WEEK_D: usize = 3226;
const WEEK_UPCS: usize = 60;

/// Parses `args` as a command line (without the program name) and runs it.
pub fn cli(args: &[&str]) -> ces_demand::Result<RunReport> {
    let mut argv = vec!["cesdemand"];
    argv.extend_from_slice(args);
    run(&Cli::try_parse_from(argv).expect("valid command line"))
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

struct Upc {
    bottle_size: f64,
    bundle: f64,
    diet: f64,
    caffeine_free: f64,
    cherry: f64,
    coke: f64,
    pepsi: f64,
    base_cost: f64,
}

fn bernoulli(rng: &mut ChaCha8Rng, p: f64) -> f64 {
    if rng.gen_bool(p) {
        1.0
    } else {
        0.0
    }
}

/// A single-week cross-section of soft-drink sales shaped like the
/// empirical application: 73 stores, 4356 store×UPC rows of which 3226
/// have positive sales. Zero-sales rows carry no price or cost, as in the
/// raw scanner data. Writes the CSV and a key=value manifest into `dir`.
pub fn week391_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(391);
    let sizes = [12.0, 16.0, 20.0, 33.8, 67.6];
    let bundles = [1.0, 2.0, 6.0, 8.0, 12.0, 24.0];
    // rare flags are pinned so no x column is identically zero
    let upcs: Vec<Upc> = (0..WEEK_UPCS)
        .map(|j| {
            let coke = j % 12 == 5;
            Upc {
                bottle_size: sizes[rng.gen_range(0..sizes.len())],
                bundle: bundles[rng.gen_range(0..bundles.len())],
                diet: bernoulli(&mut rng, 0.5),
                caffeine_free: bernoulli(&mut rng, 0.25),
                cherry: if j == 3 || j == 40 { 1.0 } else { 0.0 },
                coke: if coke { 1.0 } else { 0.0 },
                pepsi: if !coke && rng.gen_bool(0.66) { 1.0 } else { 0.0 },
                base_cost: rng.gen_range(0.008..0.024),
            }
        })
        .collect();

    // 49 stores carry 60 UPCs and 24 carry 59: 4356 rows in total
    let mut cells = Vec::with_capacity(WEEK_N);
    for s in 0..WEEK_STORES {
        let carried = if s < 49 { WEEK_UPCS } else { WEEK_UPCS - 1 };
        for j in 0..carried {
            let u = &upcs[j];
            let promo = bernoulli(&mut rng, 0.4);
            let cost = u.base_cost * (1.0 + 0.15 * rng.sample::<f64, _>(StandardNormal)).max(0.2);
            let xi: f64 = 0.3 * rng.sample::<f64, _>(StandardNormal);
            let markup = 1.4 + 0.2 * (1.0 - promo) + 0.3 * xi.max(-1.0);
            let eta: f64 = rng.sample(StandardNormal);
            let gate = 0.02 * u.bottle_size + 1.2 * promo + 0.03 * u.bundle + 0.5 * xi + eta;
            cells.push((s, j, promo, cost, cost * markup, xi, gate));
        }
    }
    assert_eq!(cells.len(), WEEK_N);

    // the 1130 lowest gate indices have zero sales
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by(|&a, &b| cells[a].6.total_cmp(&cells[b].6));
    let mut open = vec![true; cells.len()];
    for &i in &order[..WEEK_N - WEEK_D] {
        open[i] = false;
    }

    let mut csv = String::from(
        "store,upc,share,price,cost,promo,bottle_size,bundle,diet,caffeine_free,cherry,coke,pepsi,is_outside\n",
    );
    let beta = [0.01, 0.02, -0.1, 0.05, 0.2, 0.3, 0.1];
    let mut start = 0;
    for s in 0..WEEK_STORES {
        let rows: Vec<usize> = (start..cells.len()).take_while(|&i| cells[i].0 == s).collect();
        start += rows.len();
        let weight = |i: usize| {
            let (_, j, _, _, price, xi, _) = cells[i];
            let u = &upcs[j];
            let x = [u.bottle_size, u.bundle, u.diet, u.caffeine_free, u.cherry, u.coke, u.pepsi];
            let v: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() - 2.0 * f64::ln(price) + xi - 12.0;
            v.exp()
        };
        let total: f64 = rows.iter().filter(|&&i| open[i]).map(|&i| weight(i)).sum();
        let mut inside = 0.0;
        for &i in &rows {
            let (_, j, promo, cost, price, _, _) = cells[i];
            let u = &upcs[j];
            let share = if open[i] { weight(i) / (1.0 + total) } else { 0.0 };
            inside += share;
            let (p, c) = if open[i] {
                (format!("{price:.17e}"), format!("{cost:.17e}"))
            } else {
                (String::new(), String::new())
            };
            let _ = writeln!(
                csv,
                "s{s:03},upc{j:02},{share:.17e},{p},{c},{promo},{},{},{},{},{},{},{},0",
                u.bottle_size, u.bundle, u.diet, u.caffeine_free, u.cherry, u.coke, u.pepsi
            );
        }
        let _ = writeln!(csv, "s{s:03},outside,{:.17e},1,0,0,0,0,0,0,0,0,0,1", 1.0 - inside);
    }

    let data = dir.join("week391.csv");
    std::fs::write(&data, csv).unwrap();
    let manifest = dir.join("week391.manifest");
    std::fs::write(
        &manifest,
        "market = store\nproduct = upc\nshare = share\nprice = price\nnumeraire = is_outside\npromotion = promo\n\
         x = bottle_size, bundle, diet, caffeine_free, cherry, coke, pepsi\n\
         w = bottle_size, bundle, diet, caffeine_free, cherry, coke, pepsi, promo\n\
         z = cost\n",
    )
    .unwrap();
    (data, manifest)
}
