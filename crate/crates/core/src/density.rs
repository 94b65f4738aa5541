//! Distribution of the extensive-margin unobservable η read off a fitted
//! first-stage link.
//!
//! A product is available when `γ + w'δ + η > 0`, so the propensity at
//! index `v` is `1 − G_η(−v)` up to location and scale. The estimate is
//! therefore only identified up to an affine map; [`sample_eta`] fixes it
//! by matching a requested mean and variance.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::firststage::{nadaraya_watson, FirstStageFit};
use crate::io::format_f64;
use crate::numerics::{sample_std, stream_rng, RATE_EXPONENT};

/// Default number of grid points.
pub const DEFAULT_GRID: usize = 512;

/// Below this cdf span the link carries no information about `G_η`.
const MIN_SPAN: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct EtaDensityEstimate {
    /// Ascending, evenly spaced points in the η scale.
    pub grid: Vec<f64>,
    /// Isotonic estimate of `G_η` on the grid, rescaled to run from 0 to 1
    /// over the grid.
    pub cdf: Vec<f64>,
    /// Central-difference derivative of `cdf`.
    pub pdf: Vec<f64>,
    /// Span of the raw isotonic estimate before rescaling: the share of the
    /// distribution covered by the observed index range.
    pub coverage: f64,
    /// Mean and variance of the distribution described by `cdf`.
    pub moments: (f64, f64),
    /// Bandwidth of the link smoother.
    pub bandwidth: f64,
    pub degenerate: bool,
}

impl EtaDensityEstimate {
    /// Linear interpolation of the cdf, 0 below and 1 above the grid.
    pub fn cdf_at(&self, u: f64) -> f64 {
        let n = self.grid.len();
        if u <= self.grid[0] {
            return if u < self.grid[0] { 0.0 } else { self.cdf[0] };
        }
        if u >= self.grid[n - 1] {
            return 1.0;
        }
        let k = self.grid.partition_point(|&g| g <= u).clamp(1, n - 1);
        let t = (u - self.grid[k - 1]) / (self.grid[k] - self.grid[k - 1]);
        self.cdf[k - 1] + t * (self.cdf[k] - self.cdf[k - 1])
    }

    /// Smallest grid-interpolated `u` with `cdf(u) ≥ p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.grid.len();
        let k = self.cdf.partition_point(|&c| c < p);
        if k == 0 {
            return self.grid[0];
        }
        if k >= n {
            return self.grid[n - 1];
        }
        let (c0, c1) = (self.cdf[k - 1], self.cdf[k]);
        let t = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.0 };
        self.grid[k - 1] + t * (self.grid[k] - self.grid[k - 1])
    }
}

/// Pool-adjacent-violators fit of a nondecreasing sequence (equal weights).
pub fn isotonic_increasing(values: &[f64]) -> Vec<f64> {
    let mut means: Vec<f64> = Vec::with_capacity(values.len());
    let mut sizes: Vec<usize> = Vec::with_capacity(values.len());
    for &v in values {
        means.push(v);
        sizes.push(1);
        while means.len() > 1 && means[means.len() - 2] > means[means.len() - 1] {
            let (m2, s2) = (means.pop().unwrap(), sizes.pop().unwrap());
            let last = means.len() - 1;
            let s1 = sizes[last];
            means[last] = (means[last] * s1 as f64 + m2 * s2 as f64) / (s1 + s2) as f64;
            sizes[last] = s1 + s2;
        }
    }
    means
        .iter()
        .zip(&sizes)
        .flat_map(|(&m, &s)| std::iter::repeat_n(m, s))
        .collect()
}

/// Central differences inside, one-sided at the ends.
fn derivative(grid: &[f64], f: &[f64]) -> Vec<f64> {
    let n = grid.len();
    (0..n)
        .map(|k| {
            let (a, b) = (k.saturating_sub(1), (k + 1).min(n - 1));
            (f[b] - f[a]) / (grid[b] - grid[a])
        })
        .collect()
}

/// Mean and variance of the distribution with the given grid cdf, with
/// each cdf increment placed at its cell midpoint.
fn grid_moments(grid: &[f64], cdf: &[f64]) -> (f64, f64) {
    let mut mass = cdf[0];
    let mut m1 = cdf[0] * grid[0];
    let mut m2 = cdf[0] * grid[0] * grid[0];
    for k in 1..grid.len() {
        let dm = cdf[k] - cdf[k - 1];
        let mid = 0.5 * (grid[k] + grid[k - 1]);
        mass += dm;
        m1 += dm * mid;
        m2 += dm * mid * mid;
    }
    let mean = m1 / mass;
    (mean, (m2 / mass - mean * mean).max(0.0))
}

/// Estimate `G_η` on a grid spanning the fitted index range.
///
/// The link is the full-sample Nadaraya–Watson estimate of the positive-
/// share probability at each grid index `v`, using the fit's bandwidth (or
/// the `n^{-1/7}` rule with constant 1 when the fit has none); `G_η(−v)` is
/// one minus that probability, oriented by the sign of the normalized
/// component.
pub fn estimate_eta_cdf(fit: &FirstStageFit, grid_size: usize) -> Result<EtaDensityEstimate> {
    if grid_size < 3 {
        return Err(Error::invalid(format!("grid needs at least 3 points, got {grid_size}")));
    }
    let v = &fit.index_values;
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Estimation("first-stage index has no range; eta distribution not identified".into()));
    }
    let h = match fit.bandwidth {
        Some(h) => h,
        None => sample_std(v) * (v.len() as f64).powf(-RATE_EXPONENT),
    };
    let (start, end) = (lo - h, hi + h);
    let step = (end - start) / (grid_size - 1) as f64;
    let index_grid: Vec<f64> = (0..grid_size).map(|k| start + step * k as f64).collect();
    let link: Vec<f64> = crate::numerics::pairs::per_row(grid_size, |k, _| {
        nadaraya_watson(v, &fit.outcomes, h, index_grid[k])
    });

    // u = −orientation · v, listed in ascending u
    let mut points: Vec<(f64, f64)> = index_grid
        .iter()
        .zip(&link)
        .map(|(&vk, &p)| (-fit.orientation * vk, 1.0 - p))
        .collect();
    if fit.orientation > 0.0 {
        points.reverse();
    }
    let grid: Vec<f64> = points.iter().map(|p| p.0).collect();
    let raw: Vec<f64> = points.iter().map(|p| p.1).collect();
    let iso: Vec<f64> = isotonic_increasing(&raw).into_iter().map(|c| c.clamp(0.0, 1.0)).collect();
    let (c0, c1) = (iso[0], iso[grid_size - 1]);
    let coverage = c1 - c0;
    // judge identification between the 5% and 95% index quantiles, away from
    // the sparsely populated edges
    let mut sorted = v.clone();
    sorted.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let vq = sorted[((sorted.len() - 1) as f64 * q).round() as usize];
        let k = (((vq - start) / step).round() as usize).min(grid_size - 1);
        iso[if fit.orientation > 0.0 { grid_size - 1 - k } else { k }]
    };
    let degenerate = (at(0.95) - at(0.05)).abs() < MIN_SPAN;
    let cdf: Vec<f64> = if degenerate {
        iso.clone()
    } else {
        iso.iter().map(|c| (c - c0) / coverage).collect()
    };
    let pdf = derivative(&grid, &cdf);
    let moments = if degenerate { (f64::NAN, f64::NAN) } else { grid_moments(&grid, &cdf) };
    Ok(EtaDensityEstimate {
        grid,
        cdf,
        pdf,
        coverage,
        moments,
        bandwidth: h,
        degenerate,
    })
}

/// Affine map of `draws` onto the requested mean and variance, using the
/// draws' own sample moments.
pub fn adjust_moments(draws: &[f64], target_mean: f64, target_variance: f64) -> Result<Vec<f64>> {
    if !(target_variance >= 0.0) || !target_mean.is_finite() || !target_variance.is_finite() {
        return Err(Error::invalid("target mean must be finite and variance non-negative"));
    }
    let n = draws.len();
    if n < 2 {
        return Err(Error::invalid("need at least two draws to match moments"));
    }
    let mean = draws.iter().sum::<f64>() / n as f64;
    let sd = sample_std(draws);
    if !(sd > 0.0) {
        return Err(Error::DegenerateDensity("draws have zero spread".into()));
    }
    let scale = target_variance.sqrt() / sd;
    Ok(draws.iter().map(|d| target_mean + scale * (d - mean)).collect())
}

/// Inverse-cdf draws from the estimate, affinely adjusted to the target
/// mean and variance.
pub fn sample_eta(
    estimate: &EtaDensityEstimate,
    count: usize,
    target_mean: f64,
    target_variance: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if estimate.degenerate {
        return Err(Error::DegenerateDensity(format!(
            "estimated cdf spans only {:.3}; outcomes carry no information about eta",
            estimate.coverage
        )));
    }
    let mut rng = stream_rng(seed, 0x6574_6100);
    let raw: Vec<f64> = (0..count)
        .map(|_| estimate.quantile(rng.gen_range(0.0..1.0)))
        .collect();
    adjust_moments(&raw, target_mean, target_variance)
}

/// Kolmogorov distance between the standardized estimate and a
/// standardized reference cdf, evaluated on the grid.
pub fn standardized_kolmogorov(estimate: &EtaDensityEstimate, reference: impl Fn(f64) -> f64) -> f64 {
    let (m, var) = estimate.moments;
    let s = var.sqrt();
    estimate
        .grid
        .iter()
        .zip(&estimate.cdf)
        .map(|(&u, &c)| (c - reference((u - m) / s)).abs())
        .fold(0.0, f64::max)
}

pub fn write_density_csv(estimate: &EtaDensityEstimate, path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e.into(),
    })?;
    wtr.write_record(["eta", "cdf", "pdf"])?;
    for k in 0..estimate.grid.len() {
        wtr.write_record([format_f64(estimate.grid[k]), format_f64(estimate.cdf[k]), format_f64(estimate.pdf[k])])?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

pub fn write_draws_csv(draws: &[f64], path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e.into(),
    })?;
    wtr.write_record(["draw", "eta"])?;
    for (k, d) in draws.iter().enumerate() {
        wtr.write_record([(k + 1).to_string(), format_f64(*d)])?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::firststage::SelectionSample;
    use crate::sim::EtaLaw;
    use nalgebra::DMatrix;
    use rand_distr::{Distribution, Normal};

    /// Outcomes `1{w1 + 0.5 w2 + η > 0}` with a widely spread index.
    fn known_truth(n: usize, law: EtaLaw, seed: u64) -> FirstStageFit {
        let mut rng = stream_rng(seed, 3);
        let spread = Normal::new(0.0, 3.0).unwrap();
        let w = DMatrix::from_fn(n, 2, |_, _| spread.sample(&mut rng));
        let outcome = (0..n).map(|i| w[(i, 0)] + 0.5 * w[(i, 1)] + law.sample(&mut rng) > 0.0).collect();
        let sample = SelectionSample {
            names: vec!["w1".into(), "w2".into()],
            w,
            outcome,
            rows: (0..n).collect(),
        };
        FirstStageFit::fixed(&sample, &[1.0, 0.5], 0).unwrap()
    }

    #[test]
    fn pava_pools_violators() {
        assert_eq!(isotonic_increasing(&[1.0, 3.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(isotonic_increasing(&[3.0, 2.0, 1.0]), vec![2.0, 2.0, 2.0]);
        let sorted = [0.1, 0.2, 0.2, 0.9];
        assert_eq!(isotonic_increasing(&sorted), sorted.to_vec());
    }

    #[test]
    fn recovers_known_laws() {
        for law in [EtaLaw::Gaussian, EtaLaw::Logistic, EtaLaw::TypeOneExtremeValue] {
            let fit = known_truth(5000, law, 7);
            let est = estimate_eta_cdf(&fit, DEFAULT_GRID).unwrap();
            assert!(!est.degenerate);
            assert!(est.cdf.windows(2).all(|w| w[0] <= w[1]));
            assert!(est.pdf.iter().all(|&p| p >= 0.0));
            let sd = law.std_dev();
            let d = standardized_kolmogorov(&est, |x| law.cdf(x * sd));
            assert!(d < 0.07, "{law:?}: {d}");
        }
    }

    #[test]
    fn pdf_integrates_to_about_one() {
        let est = estimate_eta_cdf(&known_truth(3000, EtaLaw::Gaussian, 8), 256).unwrap();
        let area: f64 = est
            .grid
            .windows(2)
            .zip(est.pdf.windows(2))
            .map(|(g, p)| 0.5 * (p[0] + p[1]) * (g[1] - g[0]))
            .sum();
        assert!((0.98..=1.0 + 1e-9).contains(&area), "{area}");
    }

    #[test]
    fn uninformative_outcomes_are_degenerate() {
        let mut fit = known_truth(4000, EtaLaw::Gaussian, 9);
        let mut rng = stream_rng(1, 1);
        fit.outcomes = (0..4000).map(|_| rng.gen_bool(0.5)).collect();
        let est = estimate_eta_cdf(&fit, 128).unwrap();
        assert!(est.degenerate);
        assert!((est.cdf[64] - 0.5).abs() < 0.05, "{}", est.cdf[64]);
        assert!(sample_eta(&est, 10, 0.0, 1.0, 0).is_err());
    }

    #[test]
    fn constant_index_is_an_error() {
        let mut fit = known_truth(100, EtaLaw::Gaussian, 10);
        fit.index_values = vec![1.0; 100];
        assert!(estimate_eta_cdf(&fit, 64).is_err());
    }

    #[test]
    fn draws_hit_target_moments_and_skew() {
        let est = estimate_eta_cdf(&known_truth(5000, EtaLaw::TypeOneExtremeValue, 11), DEFAULT_GRID).unwrap();
        let draws = sample_eta(&est, 100_000, 0.0, 4.0, 3).unwrap();
        assert_eq!(draws.len(), 100_000);
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02 * 2.0);
        assert!((var / 4.0 - 1.0).abs() < 0.05);
        let skew = draws.iter().map(|d| ((d - mean) / var.sqrt()).powi(3)).sum::<f64>() / n;
        assert!(skew > 0.5, "{skew}");
        assert_eq!(draws, sample_eta(&est, 100_000, 0.0, 4.0, 3).unwrap());
    }

    #[test]
    fn adjustment_is_affine_equivariant() {
        let raw: Vec<f64> = (0..50).map(|i| ((i * 7) % 13) as f64).collect();
        let std1 = adjust_moments(&raw, 0.0, 1.0).unwrap();
        let moved = adjust_moments(&raw, 3.0, 9.0).unwrap();
        let back = adjust_moments(&moved, 0.0, 1.0).unwrap();
        for (a, b) in std1.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
