use libm::erfc;

/// `(2π)^{-1/2}`
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard Gaussian smoothing kernel.
#[inline]
pub fn gaussian_kernel(u: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    gaussian_kernel(x)
}

/// Standard normal CDF, accurate in both tails.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `Φ(x)·(−x)/ϕ(x)` for large negative `x`, as a function of `x²`.
fn tail_series(x2: f64) -> f64 {
    let inv = 1.0 / x2;
    1.0 - inv * (1.0 - inv * (3.0 - inv * (15.0 - inv * 105.0)))
}

/// Inverse Mills ratio `ϕ(x) / Φ(x)`, stable for very negative `x`.
pub fn inverse_mills(x: f64) -> f64 {
    if x > -30.0 {
        normal_pdf(x) / normal_cdf(x)
    } else {
        // asymptotic expansion of ϕ/Φ for x → −∞
        let x2 = x * x;
        -x / tail_series(x2)
    }
}

/// `ln Φ(x)`, finite for all finite `x`.
pub fn log_normal_cdf(x: f64) -> f64 {
    if x > -30.0 {
        normal_cdf(x).ln()
    } else {
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + tail_series(x2).ln()
    }
}

/// Derivative of the inverse Mills ratio, `−λ(x)(x + λ(x))`.
pub fn inverse_mills_derivative(x: f64) -> f64 {
    let l = inverse_mills(x);
    -l * (x + l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn kernel_values() {
        assert!((gaussian_kernel(0.0) - 0.3989422804).abs() < 1e-10);
        assert!(gaussian_kernel(10.0) < 1e-21);
        assert!(gaussian_kernel(-10.0) < 1e-21);
        assert!((INV_SQRT_2PI - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-16);
        for u in [0.1, 0.7, 2.5, 6.0] {
            assert_eq!(gaussian_kernel(u), gaussian_kernel(-u));
        }
    }

    #[test]
    fn kernel_integrates_to_one() {
        // composite Simpson on [-12, 12]
        let n = 4000;
        let (a, b) = (-12.0, 12.0);
        let h = (b - a) / n as f64;
        let mut s = gaussian_kernel(a) + gaussian_kernel(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * gaussian_kernel(a + i as f64 * h);
        }
        assert!((s * h / 3.0 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn normal_cdf_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        let p = normal_cdf(1.959963984540054);
        assert!((p - 0.975).abs() < 1e-12, "{p:.17}");
        assert!(normal_cdf(-37.0) > 0.0);
    }

    #[test]
    fn log_cdf_is_continuous_at_switch() {
        let a = log_normal_cdf(-30.0 + 1e-9);
        let b = log_normal_cdf(-30.0 - 1e-9);
        assert!((a - b).abs() / a.abs() < 1e-8, "{a} {b}");
        assert!(log_normal_cdf(-200.0).is_finite());
        assert!((log_normal_cdf(1.0) - normal_cdf(1.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn mills_is_continuous_at_switch() {
        let a = inverse_mills(-30.0 + 1e-9);
        let b = inverse_mills(-30.0 - 1e-9);
        assert!((a - b).abs() / a < 1e-6);
        assert!((inverse_mills(0.0) - 2.0 * INV_SQRT_2PI).abs() < 1e-14);
    }
}
