//! Metaheuristic baselines for the per-path `(τ, φ, f_D)` search.
//!
//! Both optimizers plug into the SAGE outer loop, so they share the
//! interference cancellation and the closed-form gain and differ from SAGE
//! only in how `|z|` is maximized.

mod cmaes;
mod pso;

pub use cmaes::{cmaes_maximize, CmaesConfig};
pub use pso::{pso_maximize, PsoConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chanmodel::{ChannelTensor, PathParams};
use crate::error::{Error, Result};
use crate::music::CoarseEstimate;
use crate::sage::{correlator_z, initial_paths, refine_with, InnerSearch, SageConfig, SageEstimate, SearchBounds};

/// Best point found by an optimizer and its objective value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Optimum<const D: usize> {
    pub point: [f64; D],
    pub value: f64,
}

pub(crate) fn check_bounds<const D: usize>(bounds: &[(f64, f64); D], init: &[f64; D]) -> Result<()> {
    for (d, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!("bound {d} ({lo}, {hi}) is not well ordered")));
        }
        if !(init[d] >= lo && init[d] <= hi) {
            return Err(Error::invalid(format!(
                "initial point {:?} outside bound {d} ({lo}, {hi})",
                init
            )));
        }
    }
    Ok(())
}

pub(crate) fn check_value<const D: usize>(v: f64, x: &[f64; D]) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("objective {v} at {x:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Pso,
    Cmaes,
}

/// Half-widths of a box centred on the current estimate. Dimensions left as
/// `None` are searched over their full range.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchWindow {
    pub tau: Option<f64>,
    pub phi: Option<f64>,
    pub doppler: Option<f64>,
}

impl SearchWindow {
    fn apply(&self, center: [f64; 3], full: &SearchBounds) -> SearchBounds {
        let shrink = |(lo, hi): (f64, f64), c: f64, w: Option<f64>| match w {
            Some(w) => ((c - w).max(lo), (c + w).min(hi)),
            None => (lo, hi),
        };
        SearchBounds {
            tau: shrink(full.tau, center[0], self.tau),
            phi: shrink(full.phi, center[1], self.phi),
            doppler: shrink(full.doppler, center[2], self.doppler),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// Outer-loop control (sweeps, tolerance, Doppler range) shared with SAGE.
    pub outer: SageConfig,
    pub pso: PsoConfig,
    pub cmaes: CmaesConfig,
    pub window: SearchWindow,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            outer: SageConfig::default(),
            pso: PsoConfig::default(),
            cmaes: CmaesConfig::default(),
            window: SearchWindow::default(),
        }
    }
}

/// [`InnerSearch`] that hands the joint `|z|` maximization to PSO or CMA-ES.
pub struct MetaheuristicSearch {
    which: Optimizer,
    config: BaselineConfig,
    rng: ChaCha8Rng,
    pub evaluations: usize,
}

impl MetaheuristicSearch {
    pub fn new(which: Optimizer, config: BaselineConfig) -> Self {
        let seed = match which {
            Optimizer::Pso => config.pso.seed,
            Optimizer::Cmaes => config.cmaes.seed,
        };
        Self {
            which,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            evaluations: 0,
        }
    }
}

impl InnerSearch for MetaheuristicSearch {
    fn maximize(
        &mut self,
        residual: &ChannelTensor,
        current: &PathParams,
        bounds: &SearchBounds,
    ) -> Result<[f64; 3]> {
        let full = bounds.as_array();
        let init: [f64; 3] = std::array::from_fn(|d| {
            [current.tau, current.phi, current.doppler][d].clamp(full[d].0, full[d].1)
        });
        let local = self.config.window.apply(init, bounds).as_array();
        let mut count = 0usize;
        let objective = |x: &[f64; 3]| {
            count += 1;
            correlator_z(x[0], x[1], x[2], residual).norm()
        };
        let best = match self.which {
            Optimizer::Pso => pso_maximize(objective, init, &local, &self.config.pso, &mut self.rng)?,
            Optimizer::Cmaes => {
                cmaes_maximize(objective, init, &local, &self.config.cmaes, &mut self.rng)?
            }
        };
        self.evaluations += count;
        Ok(best.point)
    }
}

/// SAGE's outer loop with the inner search replaced by `which`.
pub fn baseline_refine(
    tensor: &ChannelTensor,
    initial: &CoarseEstimate,
    which: Optimizer,
    config: &BaselineConfig,
) -> Result<SageEstimate> {
    baseline_refine_paths(tensor, &initial_paths(initial), which, config)
}

pub fn baseline_refine_paths(
    tensor: &ChannelTensor,
    initial: &[PathParams],
    which: Optimizer,
    config: &BaselineConfig,
) -> Result<SageEstimate> {
    let bounds = config.outer.bounds(&tensor.grid);
    let mut search = MetaheuristicSearch::new(which, config.clone());
    refine_with(tensor, initial, &config.outer, &bounds, &mut search)
}
