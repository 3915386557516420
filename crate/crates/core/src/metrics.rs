//! Reconstruction and localization scores.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Score reported for an exact reconstruction.
pub const CCNE_CEILING_DB: f64 = 160.0;

/// Complex channel normalized error in dB, `-10·log10(‖x̂ − x‖² / ‖x‖²)`.
/// Larger is better. Exact matches are clamped to [`CCNE_CEILING_DB`].
pub fn ccne(estimate: &[Complex64], truth: &[Complex64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::dim(format!(
            "estimate has {} elements, truth has {}",
            estimate.len(),
            truth.len()
        )));
    }
    let denom: f64 = truth.iter().map(|v| v.norm_sqr()).sum();
    if !(denom > 0.0) {
        return Err(Error::invalid("truth has zero energy"));
    }
    let num: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    if !num.is_finite() {
        return Err(Error::NonFinite("estimate".into()));
    }
    if num == 0.0 {
        return Ok(CCNE_CEILING_DB);
    }
    Ok((-10.0 * (num / denom).log10()).min(CCNE_CEILING_DB))
}

/// Empirical CDF of a sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cdf {
    pub values: Vec<f64>,
}

impl Cdf {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty sample"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cdf sample".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { values })
    }

    /// Fraction of samples `<= x`.
    pub fn at(&self, x: f64) -> f64 {
        self.values.partition_point(|v| *v <= x) as f64 / self.values.len() as f64
    }

    /// Lower empirical quantile, `q` in `[0, 1]`.
    pub fn quantile(&self, q: f64) -> f64 {
        let n = self.values.len();
        let i = ((q.clamp(0.0, 1.0) * n as f64).ceil() as usize).clamp(1, n) - 1;
        self.values[i]
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `(x, F(x))` pairs, one per sample.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let n = self.values.len() as f64;
        self.values
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, (i + 1) as f64 / n))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ccne_examples() {
        let x = vec![Complex64::new(1.0, 0.0); 4];
        assert_eq!(ccne(&x, &x).unwrap(), CCNE_CEILING_DB);
        let half: Vec<_> = x.iter().map(|v| v * 0.9).collect();
        assert!((ccne(&half, &x).unwrap() - 20.0).abs() < 1e-9);
        let zero = vec![Complex64::new(0.0, 0.0); 4];
        assert!((ccne(&zero, &x).unwrap()).abs() < 1e-12);
        assert!(ccne(&x, &zero).is_err());
        assert!(ccne(&x[..3], &x).is_err());
    }

    proptest! {
        #[test]
        fn ccne_is_scale_invariant(s in 0.1f64..10.0, e in 0.01f64..0.5) {
            let x: Vec<_> = (0..8).map(|i| Complex64::new(i as f64 + 1.0, -(i as f64))).collect();
            let y: Vec<_> = x.iter().map(|v| v * (1.0 + e)).collect();
            let xs: Vec<_> = x.iter().map(|v| v * s).collect();
            let ys: Vec<_> = y.iter().map(|v| v * s).collect();
            prop_assert!((ccne(&y, &x).unwrap() - ccne(&ys, &xs).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn cdf_is_monotone(v in proptest::collection::vec(-100.0f64..100.0, 1..50), a in -100.0f64..100.0, b in -100.0f64..100.0) {
            let c = Cdf::new(v).unwrap();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(c.at(lo) <= c.at(hi));
            prop_assert!(c.at(c.quantile(0.5)) >= 0.5);
        }
    }
}
