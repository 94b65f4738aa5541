use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::linalg::{checked_inverse, symmetrize};
use crate::numerics::{pairs, sample_std, stream_rng, INV_SQRT_2PI, RATE_EXPONENT};

use super::{draw_covariance, market_counts, SecondStageData, SecondStageFit, SecondStageMethod};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PowellBandwidth {
    /// `std(index) · C · D^{-1/7}` over the uncensored index values.
    Rule { constant: f64 },
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PowellCovariance {
    /// U-statistic sandwich.
    Sandwich,
    /// Resample whole markets, holding the index and bandwidth fixed.
    Bootstrap { replications: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowellOptions {
    pub bandwidth: PowellBandwidth,
    pub covariance: PowellCovariance,
    pub seed: u64,
}

impl Default for PowellOptions {
    fn default() -> Self {
        Self {
            bandwidth: PowellBandwidth::Rule { constant: 1.0 },
            covariance: PowellCovariance::Bootstrap { replications: 200 },
            seed: 0,
        }
    }
}

/// Markets below which the block bootstrap is flagged as unreliable.
const MIN_BOOTSTRAP_MARKETS: usize = 30;

/// Per-row kernel sums `W_i = Σ_{j≠i} c_j k_ij` and
/// `B_i = Σ_{j≠i} c_j k_ij cols_j`, with the unnormalized Gaussian
/// `k_ij = exp(−((v_i − v_j)/h)² / 2)`.
fn neighbour_sums(v: &[f64], inv_h: f64, counts: &[f64], cols: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = v.len();
    let p = cols.ncols();
    let weighted: Vec<f64> = (0..p)
        .flat_map(|c| (0..n).map(move |i| (c, i)))
        .map(|(c, i)| counts[i] * cols[(i, c)])
        .collect();
    let mut acc = pairs::upper_triangle_sums(n, p + 1, |i, acc, k| {
        let rest = &v[i + 1..];
        k.resize(rest.len(), 0.0);
        pairs::gaussian_weights(v[i], rest, inv_h, k);
        let (w, b) = acc.split_at_mut(n);
        w[i] += pairs::lane_dot(k, &counts[i + 1..]);
        pairs::axpy(counts[i], k, &mut w[i + 1..]);
        for c in 0..p {
            let col = &weighted[c * n..(c + 1) * n];
            let seg = &mut b[c * n..(c + 1) * n];
            seg[i] += pairs::lane_dot(k, &col[i + 1..]);
            pairs::axpy(col[i], k, &mut seg[i + 1..]);
        }
    });
    let b = DMatrix::from_vec(n, p, acc.split_off(n));
    (acc, b)
}

/// `Σ_{i<j} c_i c_j ω_ij (m_i − m_j)(m_i − m_j)'` with
/// `ω_ij = κ((v_i − v_j)/h) / h`.
pub fn pairwise_moments(v: &[f64], h: f64, counts: &[f64], m: &DMatrix<f64>) -> DMatrix<f64> {
    let (w, b) = neighbour_sums(v, 1.0 / h, counts, m);
    let p = m.ncols();
    // Σ_i c_i (W_i m_i m_i' − m_i B_i')
    let mut s = DMatrix::zeros(p, p);
    for i in 0..v.len() {
        if counts[i] == 0.0 {
            continue;
        }
        let mi = m.row(i).transpose();
        let bi = b.row(i).transpose();
        s.ger(counts[i] * w[i], &mi, &mi, 1.0);
        s.ger(-counts[i], &mi, &bi, 1.0);
    }
    symmetrize(&s) * (INV_SQRT_2PI / h)
}

/// Centred `[y, r, q]` stacked column-wise.
fn stacked(data: &SecondStageData) -> (DMatrix<f64>, usize, usize) {
    let q = data.instruments();
    let (kr, kq) = (data.r.ncols(), q.ncols());
    let n = data.n();
    let mut m = DMatrix::from_fn(n, 1 + kr + kq, |i, c| match c {
        0 => data.y[i],
        c if c <= kr => data.r[(i, c - 1)],
        c => q[(i, c - 1 - kr)],
    });
    for mut col in m.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    (m, kr, kq)
}

struct Solution {
    beta: DVector<f64>,
    /// `(G' W G)⁻¹`
    a_inv: DMatrix<f64>,
    /// `G' W` with `G = S_qr`, `W = S_qq⁻¹`.
    gw: DMatrix<f64>,
}

/// Pairwise 2SLS from the stacked moment matrix.
fn solve(s: &DMatrix<f64>, kr: usize, kq: usize) -> Result<Solution> {
    let szz = s.view((1 + kr, 1 + kr), (kq, kq)).into_owned();
    let szr = s.view((1 + kr, 1), (kq, kr)).into_owned();
    let szy = s.view((1 + kr, 0), (kq, 1)).into_owned();
    let wzz = checked_inverse(&szz, "pairwise instrument moment matrix")?;
    let gw = szr.transpose() * &wzz;
    let a = symmetrize(&(&gw * &szr));
    let a_inv = checked_inverse(&a, "pairwise weighted cross-moment matrix")?;
    let beta = (&a_inv * (&gw * szy)).column(0).into_owned();
    Ok(Solution { beta, a_inv, gw })
}

fn resolve_bandwidth(index: &[f64], rule: PowellBandwidth, warnings: &mut Vec<String>) -> Result<f64> {
    match rule {
        PowellBandwidth::Fixed(h) if h > 0.0 && h.is_finite() => Ok(h),
        PowellBandwidth::Fixed(h) => Err(Error::Bandwidth(format!("bandwidth must be positive, got {h}"))),
        PowellBandwidth::Rule { constant } => {
            if !(constant > 0.0) {
                return Err(Error::Bandwidth(format!("constant must be positive, got {constant}")));
            }
            let n = index.len();
            if n < 2 {
                return Err(Error::Bandwidth(format!("need at least 2 uncensored rows, got {n}")));
            }
            let sd = sample_std(index);
            let magnitude = index.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if sd > 1e-12 * magnitude.max(1.0) && sd.is_finite() {
                Ok(sd * constant * (n as f64).powf(-RATE_EXPONENT))
            } else {
                warnings.push("selection index is constant on the uncensored rows; using uniform pair weights".into());
                Ok(1.0)
            }
        }
    }
}

/// Kernel-weighted pairwise-differenced IV estimator of `(−σ, β)`.
///
/// `index[i]` is the first-stage index `w'δ̂` of observation `i` of
/// `data`. Pairs with close indices get large weights, so differencing
/// removes the selection term, which depends on the index only.
pub fn powell_fit(data: &SecondStageData, index: &[f64], options: &PowellOptions) -> Result<SecondStageFit> {
    if index.len() != data.n() {
        return Err(Error::DimensionMismatch {
            what: "selection index",
            expected: data.n(),
            found: index.len(),
        });
    }
    data.check_identification()?;
    let mut warnings = Vec::new();
    let h = resolve_bandwidth(index, options.bandwidth, &mut warnings)?;
    let (m, kr, kq) = stacked(data);
    let ones = vec![1.0; data.n()];
    let s = pairwise_moments(index, h, &ones, &m);
    let sol = solve(&s, kr, kq)?;
    let (covariance, mut cov_warnings) = powell_covariance_inner(data, index, h, &m, kr, kq, &sol, options)?;
    warnings.append(&mut cov_warnings);
    Ok(SecondStageFit {
        method: SecondStageMethod::Powell,
        first_stage: None,
        names: data.names.clone(),
        coefficients: sol.beta.as_slice().to_vec(),
        covariance,
        n: data.n_total,
        d: data.n(),
        bandwidth: Some(h),
        warnings,
    })
}

/// Covariance of [`powell_fit`]'s estimate at the given bandwidth.
pub fn powell_covariance(
    data: &SecondStageData,
    index: &[f64],
    h: f64,
    options: &PowellOptions,
) -> Result<(DMatrix<f64>, Vec<String>)> {
    let (m, kr, kq) = stacked(data);
    let s = pairwise_moments(index, h, &vec![1.0; data.n()], &m);
    let sol = solve(&s, kr, kq)?;
    powell_covariance_inner(data, index, h, &m, kr, kq, &sol, options)
}

#[allow(clippy::too_many_arguments)]
fn powell_covariance_inner(
    data: &SecondStageData,
    index: &[f64],
    h: f64,
    m: &DMatrix<f64>,
    kr: usize,
    kq: usize,
    sol: &Solution,
    options: &PowellOptions,
) -> Result<(DMatrix<f64>, Vec<String>)> {
    match options.covariance {
        PowellCovariance::Sandwich => Ok((sandwich(index, h, m, kr, kq, sol), Vec::new())),
        PowellCovariance::Bootstrap { replications } => {
            if replications < 2 {
                return Err(Error::invalid("bootstrap needs at least two replications"));
            }
            let mut warnings = Vec::new();
            if data.n_markets < MIN_BOOTSTRAP_MARKETS {
                warnings.push(format!(
                    "only {} markets; block bootstrap standard errors are unreliable",
                    data.n_markets
                ));
            }
            let mut draws = Vec::with_capacity(replications);
            for r in 0..replications {
                let mut rng = stream_rng(options.seed, 0x706f_0000 + r as u64);
                let counts = market_counts(data.n_markets, &mut rng);
                let keep: Vec<usize> = (0..data.n()).filter(|&i| counts[data.market[i]] > 0.0).collect();
                let c: Vec<f64> = keep.iter().map(|&i| counts[data.market[i]]).collect();
                let v: Vec<f64> = keep.iter().map(|&i| index[i]).collect();
                let s = pairwise_moments(&v, h, &c, &m.select_rows(&keep));
                if let Ok(b) = solve(&s, kr, kq) {
                    draws.push(b.beta);
                }
            }
            if draws.len() < replications {
                warnings.push(format!("{} bootstrap replications were singular", replications - draws.len()));
            }
            Ok((symmetrize(&draw_covariance(&draws)?), warnings))
        }
    }
}

/// `A⁻¹ G'W Ω W G A⁻¹` with `Ω = Σ_i r_i r_i'` and
/// `r_i = Σ_j ω_ij (q_i − q_j)(e_i − e_j)`.
fn sandwich(index: &[f64], h: f64, m: &DMatrix<f64>, kr: usize, kq: usize, sol: &Solution) -> DMatrix<f64> {
    let n = index.len();
    let y = m.column(0);
    let r = m.view((0, 1), (n, kr));
    let q = m.view((0, 1 + kr), (n, kq));
    let e = y - r * &sol.beta;
    let cols = DMatrix::from_fn(n, 1 + 2 * kq, |i, c| match c {
        0 => e[i],
        c if c <= kq => q[(i, c - 1)] * e[i],
        c => q[(i, c - 1 - kq)],
    });
    let (w, b) = neighbour_sums(index, 1.0 / h, &vec![1.0; n], &cols);
    let scale = INV_SQRT_2PI / h;
    let mut omega = DMatrix::zeros(kq, kq);
    let mut ri = DVector::zeros(kq);
    for i in 0..n {
        for c in 0..kq {
            // W_i q_i e_i − q_i E_i − e_i Q_i + (QE)_i
            ri[c] = scale * (w[i] * q[(i, c)] * e[i] - q[(i, c)] * b[(i, 0)] - e[i] * b[(i, 1 + kq + c)] + b[(i, 1 + c)]);
        }
        omega.ger(1.0, &ri, &ri, 1.0);
    }
    let middle = &sol.gw * symmetrize(&omega) * sol.gw.transpose();
    symmetrize(&(&sol.a_inv * middle * &sol.a_inv))
}

/// Unweighted pairwise-differenced 2SLS, evaluated pair by pair.
///
/// Reference implementation: every pair gets weight 1.
pub fn pairwise_tsls(data: &SecondStageData) -> Result<Vec<f64>> {
    data.check_identification()?;
    let q = data.instruments();
    let (n, kr, kq) = (data.n(), data.r.ncols(), q.ncols());
    let mut szz = DMatrix::<f64>::zeros(kq, kq);
    let mut szr = DMatrix::<f64>::zeros(kq, kr);
    let mut szy = DVector::<f64>::zeros(kq);
    let mut dz = DVector::zeros(kq);
    let mut dr = DVector::zeros(kr);
    for i in 0..n {
        for j in i + 1..n {
            for c in 0..kq {
                dz[c] = q[(i, c)] - q[(j, c)];
            }
            for c in 0..kr {
                dr[c] = data.r[(i, c)] - data.r[(j, c)];
            }
            let dy = data.y[i] - data.y[j];
            szz.ger(1.0, &dz, &dz, 1.0);
            szr.ger(1.0, &dz, &dr, 1.0);
            szy.axpy(dy, &dz, 1.0);
        }
    }
    let wzz = checked_inverse(&szz, "pairwise instrument moment matrix")?;
    let gw = szr.transpose() * &wzz;
    let a = checked_inverse(&symmetrize(&(&gw * &szr)), "pairwise cross-moment matrix")?;
    Ok((a * gw * szy).as_slice().to_vec())
}
