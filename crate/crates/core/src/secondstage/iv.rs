use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::linalg::{checked_inverse, symmetrize};

/// Two-stage least squares with heteroskedasticity-robust covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct TslsFit {
    pub coefficients: DVector<f64>,
    /// HC0 sandwich `(P'P)⁻¹ (Σ P_i P_i' u_i²) (P'P)⁻¹`.
    pub covariance: DMatrix<f64>,
    pub residuals: DVector<f64>,
    /// First-stage fitted regressors `Q (Q'Q)⁻¹ Q'X`.
    pub projected: DMatrix<f64>,
    /// `(P'P)⁻¹`.
    pub bread: DMatrix<f64>,
}

/// 2SLS of `y` on `x` with instruments `q`, no intercept added.
pub fn robust_tsls(y: &DVector<f64>, x: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<TslsFit> {
    let n = y.len();
    if x.nrows() != n || q.nrows() != n {
        return Err(Error::DimensionMismatch {
            what: "2SLS rows",
            expected: n,
            found: x.nrows().min(q.nrows()),
        });
    }
    if q.ncols() < x.ncols() {
        return Err(Error::UnderIdentified {
            instruments: q.ncols(),
            regressors: x.ncols(),
        });
    }
    let qtq = q.transpose() * q;
    let pi = checked_inverse(&qtq, "instrument cross-moment matrix")? * (q.transpose() * x);
    let projected = q * pi;
    let ptp = symmetrize(&(projected.transpose() * &projected));
    let bread = checked_inverse(&ptp, "projected regressor cross-moment matrix")?;
    let coefficients = &bread * (projected.transpose() * y);
    let residuals = y - x * &coefficients;
    let k = x.ncols();
    let mut meat = DMatrix::zeros(k, k);
    for i in 0..n {
        let p = projected.row(i).transpose();
        meat.ger(residuals[i] * residuals[i], &p, &p, 1.0);
    }
    let covariance = symmetrize(&(&bread * symmetrize(&meat) * &bread));
    Ok(TslsFit {
        coefficients,
        covariance,
        residuals,
        projected,
        bread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::stream_rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn exact_fit_recovers_coefficients() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, -1.0]);
        let y = &x * DVector::from_vec(vec![2.0, -3.0]);
        let fit = robust_tsls(&y, &x, &x).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((fit.coefficients[1] + 3.0).abs() < 1e-12);
        assert!(fit.covariance.abs().max() < 1e-20);
    }

    #[test]
    fn instruments_remove_endogeneity_bias() {
        let mut rng = stream_rng(1, 0);
        let nd = Normal::new(0.0, 1.0).unwrap();
        let n = 20_000;
        let (mut xs, mut zs, mut ys) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..n {
            let z = nd.sample(&mut rng);
            let u = nd.sample(&mut rng);
            let x = z + u + 0.3 * nd.sample(&mut rng);
            xs.push(x);
            zs.push(z);
            ys.push(1.5 * x + u);
        }
        let x = DMatrix::from_vec(n, 1, xs);
        let z = DMatrix::from_vec(n, 1, zs);
        let y = DVector::from_vec(ys);
        let iv = robust_tsls(&y, &x, &z).unwrap();
        let ols = robust_tsls(&y, &x, &x).unwrap();
        let se = iv.covariance[(0, 0)].sqrt();
        assert!((iv.coefficients[0] - 1.5).abs() < 3.0 * se);
        assert!(ols.coefficients[0] - 1.5 > 0.3);
    }

    #[test]
    fn too_few_instruments() {
        let x = DMatrix::zeros(5, 2);
        let q = DMatrix::zeros(5, 1);
        assert!(matches!(
            robust_tsls(&DVector::zeros(5), &x, &q),
            Err(Error::UnderIdentified { instruments: 1, regressors: 2 })
        ));
    }
}
