//! (μ/μ_w, λ) CMA-ES with rank-one and rank-μ covariance updates and
//! cumulative step-size adaptation. Works in coordinates scaled to the unit
//! box; samples outside the box are clamped before evaluation.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_bounds, check_value, Optimum};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CmaesConfig {
    /// Offspring per generation (λ).
    pub population: usize,
    pub generations: usize,
    /// Initial step size in unit-box coordinates.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for CmaesConfig {
    fn default() -> Self {
        Self {
            population: 12,
            generations: 50,
            sigma: 0.1,
            seed: 0,
        }
    }
}

impl CmaesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::invalid("CMA-ES population must be at least 4"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("CMA-ES sigma must be positive"));
        }
        Ok(())
    }

    pub fn evaluations(&self) -> usize {
        1 + self.population * self.generations
    }
}

/// Maximizes `objective` over `bounds`, starting the search distribution at
/// `init`. Returns the best point ever evaluated (including `init`).
pub fn cmaes_maximize<const D: usize, F>(
    mut objective: F,
    init: [f64; D],
    bounds: &[(f64, f64); D],
    config: &CmaesConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Optimum<D>>
where
    F: FnMut(&[f64; D]) -> f64,
{
    config.validate()?;
    check_bounds(bounds, &init)?;
    let n = D as f64;
    let lambda = config.population;
    let mu = lambda / 2;
    let raw: Vec<f64> = (0..mu)
        .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - ((i + 1) as f64).ln())
        .collect();
    let wsum: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / wsum).collect();
    let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

    let cc = (4.0 + mueff / n) / (n + 4.0 + 2.0 * mueff / n);
    let cs = (mueff + 2.0) / (n + mueff + 5.0);
    let c1 = 2.0 / ((n + 1.3).powi(2) + mueff);
    let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((n + 2.0).powi(2) + mueff));
    let damps = 1.0 + 2.0 * (((mueff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + cs;
    let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

    let to_unit = |x: &[f64; D]| -> DVector<f64> {
        DVector::from_fn(D, |d, _| (x[d] - bounds[d].0) / (bounds[d].1 - bounds[d].0))
    };
    let from_unit = |u: &DVector<f64>| -> [f64; D] {
        std::array::from_fn(|d| bounds[d].0 + u[d].clamp(0.0, 1.0) * (bounds[d].1 - bounds[d].0))
    };

    let mut best = Optimum {
        point: init,
        value: check_value(objective(&init), &init)?,
    };
    let mut mean = to_unit(&init);
    let mut sigma = config.sigma;
    let mut cov = DMatrix::<f64>::identity(D, D);
    let mut ps = DVector::<f64>::zeros(D);
    let mut pc = DVector::<f64>::zeros(D);

    for gen in 0..config.generations {
        let eig = cov.clone().symmetric_eigen();
        let sqrt_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
        let inv_sqrt_diag =
            DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.max(1e-300).sqrt()));
        let bd = &eig.eigenvectors * &sqrt_diag;
        let inv_sqrt_c = &eig.eigenvectors * inv_sqrt_diag * eig.eigenvectors.transpose();

        let mut offspring: Vec<(DVector<f64>, f64)> = Vec::with_capacity(lambda);
        for _ in 0..lambda {
            let z = DVector::from_fn(D, |_, _| StandardNormal.sample(rng));
            let y = &bd * z;
            // Repair by clamping; the repaired point drives the update.
            let u = (&mean + sigma * y).map(|v| v.clamp(0.0, 1.0));
            let x = from_unit(&u);
            let v = check_value(objective(&x), &x)?;
            if v > best.value {
                best = Optimum { point: x, value: v };
            }
            offspring.push((u, v));
        }
        offspring.sort_by(|a, b| b.1.total_cmp(&a.1));

        let old_mean = mean.clone();
        mean = DVector::zeros(D);
        for (w, (u, _)) in weights.iter().zip(&offspring) {
            mean += *w * u;
        }
        let step = (&mean - &old_mean) / sigma;
        ps = (1.0 - cs) * &ps + (cs * (2.0 - cs) * mueff).sqrt() * (&inv_sqrt_c * &step);
        let ps_norm = ps.norm();
        let hsig = ps_norm / (1.0 - (1.0 - cs).powi(2 * (gen as i32 + 1))).sqrt() / chi_n
            < 1.4 + 2.0 / (n + 1.0);
        let h = if hsig { 1.0 } else { 0.0 };
        pc = (1.0 - cc) * &pc + h * (cc * (2.0 - cc) * mueff).sqrt() * &step;

        let mut rank_mu = DMatrix::<f64>::zeros(D, D);
        for (w, (u, _)) in weights.iter().zip(&offspring) {
            let y = (u - &old_mean) / sigma;
            rank_mu += *w * &y * y.transpose();
        }
        cov = (1.0 - c1 - cmu) * &cov
            + c1 * (&pc * pc.transpose() + (1.0 - h) * cc * (2.0 - cc) * &cov)
            + cmu * rank_mu;
        cov = 0.5 * (&cov + cov.transpose());
        sigma *= ((cs / damps) * (ps_norm / chi_n - 1.0)).exp();
        if !sigma.is_finite() || sigma < 1e-300 {
            break;
        }
    }
    Ok(best)
}
