//! Global-best particle swarm optimizer with velocity clamping.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_bounds, check_value, Optimum};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsoConfig {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Velocity limit as a fraction of each dimension's range.
    pub velocity_clamp: f64,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            particles: 40,
            iterations: 15,
            inertia: 0.729,
            cognitive: 1.494,
            social: 1.494,
            velocity_clamp: 0.2,
            seed: 0,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::invalid("PSO needs at least one particle"));
        }
        for (name, v) in [
            ("inertia", self.inertia),
            ("cognitive", self.cognitive),
            ("social", self.social),
        ] {
            if !v.is_finite() {
                return Err(Error::invalid(format!("PSO {name} weight is not finite")));
            }
        }
        if !(self.velocity_clamp > 0.0 && self.velocity_clamp.is_finite()) {
            return Err(Error::invalid("velocity clamp must be positive"));
        }
        Ok(())
    }

    /// Objective evaluations used per call.
    pub fn evaluations(&self) -> usize {
        self.particles * (self.iterations + 1)
    }
}

/// Maximizes `objective` over the box `bounds`, with particle 0 starting at
/// `init`. Returns the best point seen, which is never worse than `init`.
pub fn pso_maximize<const D: usize, F>(
    mut objective: F,
    init: [f64; D],
    bounds: &[(f64, f64); D],
    config: &PsoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Optimum<D>>
where
    F: FnMut(&[f64; D]) -> f64,
{
    config.validate()?;
    check_bounds(bounds, &init)?;
    let vmax: [f64; D] = std::array::from_fn(|d| config.velocity_clamp * (bounds[d].1 - bounds[d].0));

    let mut pos = Vec::with_capacity(config.particles);
    let mut vel = Vec::with_capacity(config.particles);
    for i in 0..config.particles {
        let x: [f64; D] = if i == 0 {
            init
        } else {
            std::array::from_fn(|d| rng.random_range(bounds[d].0..=bounds[d].1))
        };
        pos.push(x);
        vel.push(std::array::from_fn::<f64, D, _>(|d| rng.random_range(-vmax[d]..=vmax[d])));
    }
    let mut best_pos = pos.clone();
    let mut best_val = Vec::with_capacity(config.particles);
    for x in &pos {
        best_val.push(check_value(objective(x), x)?);
    }
    // Ties keep the seeded particle so the result never regresses below init.
    let mut g = 0;
    for i in 1..config.particles {
        if best_val[i] > best_val[g] {
            g = i;
        }
    }
    let mut global = (best_pos[g], best_val[g]);

    for _ in 0..config.iterations {
        for i in 0..config.particles {
            for d in 0..D {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let v = config.inertia * vel[i][d]
                    + config.cognitive * r1 * (best_pos[i][d] - pos[i][d])
                    + config.social * r2 * (global.0[d] - pos[i][d]);
                vel[i][d] = v.clamp(-vmax[d], vmax[d]);
                let x = pos[i][d] + vel[i][d];
                if x < bounds[d].0 || x > bounds[d].1 {
                    pos[i][d] = x.clamp(bounds[d].0, bounds[d].1);
                    vel[i][d] = 0.0;
                } else {
                    pos[i][d] = x;
                }
            }
            let v = check_value(objective(&pos[i]), &pos[i])?;
            if v > best_val[i] {
                best_val[i] = v;
                best_pos[i] = pos[i];
            }
            if v > global.1 {
                global = (pos[i], v);
            }
        }
    }
    Ok(Optimum {
        point: global.0,
        value: global.1,
    })
}
