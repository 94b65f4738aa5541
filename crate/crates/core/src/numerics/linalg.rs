use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value floor below which a matrix is treated as singular.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Right singular vector of the smallest singular value, plus the ratio of
/// smallest to largest singular value.
pub fn weakest_direction(m: &DMatrix<f64>) -> (Vec<f64>, f64) {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (imin, smin) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
    let smax = svd.singular_values.max();
    let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
    (v_t.row(imin).iter().copied().collect(), ratio)
}

/// Inverse of a square matrix, or a rank-deficiency error naming the null
/// direction.
pub fn checked_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let (null_direction, ratio) = weakest_direction(m);
    if !(ratio > RANK_TOLERANCE) {
        return Err(Error::RankDeficient { what, null_direction });
    }
    m.clone()
        .try_inverse()
        .ok_or(Error::RankDeficient { what, null_direction })
}

pub fn checked_solve(m: &DMatrix<f64>, rhs: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    Ok(checked_inverse(m, what)? * rhs)
}

/// `(a + aᵀ) / 2`
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}
