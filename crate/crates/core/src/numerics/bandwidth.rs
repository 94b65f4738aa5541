use crate::error::{Error, Result};

/// Polynomial rate applied to the sample size.
pub const RATE_EXPONENT: f64 = 1.0 / 7.0;

/// Which fitted index supplies the scale of the rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScaleSource {
    /// Index from the parametric Probit fit (first-stage bandwidth).
    ProbitIndex,
    /// Index from the Klein-Spady fit (second-stage bandwidth).
    KleinSpadyIndex,
}

/// `h_n = std(index) · C · n^{-1/7}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandwidthRule {
    pub constant: f64,
    pub scale_source: ScaleSource,
}

impl BandwidthRule {
    pub fn new(constant: f64, scale_source: ScaleSource) -> Result<Self> {
        if !(constant > 0.0) || !constant.is_finite() {
            return Err(Error::Bandwidth(format!("constant must be positive, got {constant}")));
        }
        Ok(Self {
            constant,
            scale_source,
        })
    }

    pub fn rate_exponent(&self) -> f64 {
        RATE_EXPONENT
    }
}

/// Sample standard deviation with the `n - 1` divisor.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}

pub fn bandwidth(rule: &BandwidthRule, index_values: &[f64]) -> Result<f64> {
    let n = index_values.len();
    if n < 2 {
        return Err(Error::Bandwidth(format!("need at least 2 index values, got {n}")));
    }
    if !(rule.constant > 0.0) {
        return Err(Error::Bandwidth(format!("constant must be positive, got {}", rule.constant)));
    }
    let sd = sample_std(index_values);
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::Bandwidth("index has zero variance".into()));
    }
    Ok(sd * rule.constant * (n as f64).powf(-RATE_EXPONENT))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_sd_sample(n: usize) -> Vec<f64> {
        // ±a alternating with unit sample standard deviation
        let raw: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let sd = sample_std(&raw);
        raw.into_iter().map(|v| v / sd).collect()
    }

    #[test]
    fn rate_at_128_is_one_half() {
        let rule = BandwidthRule::new(1.0, ScaleSource::ProbitIndex).unwrap();
        let h = bandwidth(&rule, &unit_sd_sample(128)).unwrap();
        assert!((h - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_input() {
        let rule = BandwidthRule::new(1.0, ScaleSource::ProbitIndex).unwrap();
        assert!(bandwidth(&rule, &[1.0]).is_err());
        assert!(bandwidth(&rule, &[2.0, 2.0, 2.0]).is_err());
        assert!(BandwidthRule::new(0.0, ScaleSource::ProbitIndex).is_err());
    }

    #[test]
    fn linear_in_constant_and_decreasing_in_n() {
        let one = BandwidthRule::new(1.0, ScaleSource::KleinSpadyIndex).unwrap();
        let two = BandwidthRule::new(2.0, ScaleSource::KleinSpadyIndex).unwrap();
        let x = unit_sd_sample(50);
        let h1 = bandwidth(&one, &x).unwrap();
        let h2 = bandwidth(&two, &x).unwrap();
        assert!((h2 - 2.0 * h1).abs() < 1e-15);
        let mut last = f64::INFINITY;
        for n in [2, 10, 100, 1000] {
            let h = bandwidth(&one, &unit_sd_sample(n)).unwrap();
            assert!(h < last);
            last = h;
        }
    }
}
