//! SAGE refinement of multipath parameters.
//!
//! Each path is updated in turn against the residual left after cancelling
//! every other path (E-step). The M-step maximizes the correlator magnitude
//! `|z|` over delay, then angle, then Doppler, and sets the gain to `z / M`.
//! The outer loop is shared with the metaheuristic baselines through
//! [`InnerSearch`].

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::chanmodel::{
    path_factors, synth_path, ChannelTensor, MeasurementGrid, PathParams, SPEED_OF_LIGHT,
};
use crate::error::{Error, Result};
use crate::music::CoarseEstimate;
use crate::search::{golden_section_max, grid_scan};

/// 120 km/h in m/s.
pub const DEFAULT_MAX_SPEED: f64 = 120.0 / 3.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SageConfig {
    pub max_iterations: usize,
    /// Stop once the largest normalized parameter change of a sweep drops
    /// below this.
    pub convergence_tol: f64,
    pub tau_points: usize,
    pub phi_points: usize,
    pub doppler_points: usize,
    pub golden_iterations: usize,
    /// One-sided Doppler search range in Hz; `1.2·f_c·v_max/c` when unset.
    pub doppler_search_range: Option<f64>,
}

impl Default for SageConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            convergence_tol: 1e-4,
            tau_points: 256,
            phi_points: 128,
            doppler_points: 128,
            golden_iterations: 30,
            doppler_search_range: None,
        }
    }
}

impl SageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be at least 1"));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::invalid("convergence_tol must be positive"));
        }
        if self.tau_points < 2 || self.phi_points < 2 || self.doppler_points < 2 {
            return Err(Error::invalid("search grids need at least two points"));
        }
        if let Some(r) = self.doppler_search_range {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::invalid("doppler search range must be positive"));
            }
        }
        Ok(())
    }

    pub fn doppler_range(&self, grid: &MeasurementGrid) -> f64 {
        self.doppler_search_range
            .unwrap_or(1.2 * grid.carrier_frequency * DEFAULT_MAX_SPEED / SPEED_OF_LIGHT)
    }

    /// Box searched for each path: delay over the unambiguous range, angle
    /// over `[-1, 1]`, Doppler over `±doppler_range`.
    pub fn bounds(&self, grid: &MeasurementGrid) -> SearchBounds {
        let r = self.doppler_range(grid);
        SearchBounds {
            tau: (0.0, grid.delay_range()),
            phi: (-1.0, 1.0),
            doppler: (-r, r),
        }
    }

    pub fn steps(&self, grid: &MeasurementGrid) -> (f64, f64, f64) {
        let b = self.bounds(grid);
        (
            (b.tau.1 - b.tau.0) / self.tau_points as f64,
            (b.phi.1 - b.phi.0) / (self.phi_points - 1) as f64,
            (b.doppler.1 - b.doppler.0) / (self.doppler_points - 1) as f64,
        )
    }
}

/// Per-dimension search box for `(τ, φ, f_D)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBounds {
    pub tau: (f64, f64),
    pub phi: (f64, f64),
    pub doppler: (f64, f64),
}

impl SearchBounds {
    pub fn as_array(&self) -> [(f64, f64); 3] {
        [self.tau, self.phi, self.doppler]
    }

    pub fn validate(&self) -> Result<()> {
        for (lo, hi) in self.as_array() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!("bound ({lo}, {hi}) is not well ordered")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: [f64; 3]) -> bool {
        self.as_array()
            .iter()
            .zip(x)
            .all(|(&(lo, hi), v)| v >= lo && v <= hi)
    }
}

/// One path update recorded during refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub path: usize,
    pub tau: f64,
    pub phi: f64,
    pub doppler: f64,
    pub alpha_re: f64,
    pub alpha_im: f64,
    /// `‖H − Σ paths‖²` after this update.
    pub residual_energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SageEstimate {
    /// Sorted by descending `|alpha|`.
    pub paths: Vec<PathParams>,
    pub iterations_used: usize,
    pub final_residual_energy: f64,
    /// Residual energy after each full sweep, starting with the initial state.
    pub sweep_energies: Vec<f64>,
    pub per_iteration_log: Vec<IterationRecord>,
}

impl SageEstimate {
    /// `Σ_l synth_path(θ_l)` on `grid`.
    pub fn reconstruct(&self, grid: &MeasurementGrid) -> ChannelTensor {
        reconstruct(grid, &self.paths)
    }

    /// Writes the per-iteration log as JSON lines.
    pub fn write_log_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for rec in &self.per_iteration_log {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn reconstruct(grid: &MeasurementGrid, paths: &[PathParams]) -> ChannelTensor {
    let mut out = ChannelTensor::zeros(0, *grid);
    for p in paths {
        out.accumulate(&synth_path(grid, p)).expect("same grid");
    }
    out
}

/// E-step: `ξ_l = H − Σ_{l'≠l} synth_path(θ_l')`.
pub fn expectation_step(
    tensor: &ChannelTensor,
    estimates: &[PathParams],
    l: usize,
) -> Result<ChannelTensor> {
    if l >= estimates.len() {
        return Err(Error::Index(format!("path {l} of {}", estimates.len())));
    }
    let mut xi = tensor.clone();
    for (k, p) in estimates.iter().enumerate() {
        if k == l {
            continue;
        }
        let s = synth_path(&tensor.grid, p);
        for (x, v) in xi.values_mut().iter_mut().zip(s.values()) {
            *x -= v;
        }
    }
    Ok(xi)
}

/// Matched-filter correlator `z = Σ_m conj(s_m(τ, φ, f_D)) ξ(m)` where `s` is
/// the unit-gain path response.
pub fn correlator_z(tau: f64, phi: f64, doppler: f64, residual: &ChannelTensor) -> Complex64 {
    let g = &residual.grid;
    let (time, freq, space) = path_factors(g, tau, phi, doppler);
    let vals = residual.values();
    let mut z = Complex64::new(0.0, 0.0);
    let mut k = 0;
    for wt in &time {
        let mut zt = Complex64::new(0.0, 0.0);
        for wf in &freq {
            let mut zf = Complex64::new(0.0, 0.0);
            for wa in &space {
                zf += wa.conj() * vals[k];
                k += 1;
            }
            zt += wf.conj() * zf;
        }
        z += wt.conj() * zt;
    }
    z
}

/// The residual contracted along two axes with the current steering, leaving
/// a vector along the third. Correlating that vector with a 1-D steering
/// gives `z` with only one parameter varying.
struct Contractions {
    /// Indexed by subcarrier; antennas and packets contracted.
    over_freq: Vec<Complex64>,
}

fn contract_for_tau(xi: &ChannelTensor, phi: f64, doppler: f64) -> Contractions {
    let g = &xi.grid;
    let (time, _, space) = path_factors(g, 0.0, phi, doppler);
    let vals = xi.values();
    let mut out = vec![Complex64::new(0.0, 0.0); g.num_subcarriers];
    let mut k = 0;
    for wt in &time {
        let wt = wt.conj();
        for slot in out.iter_mut() {
            let mut acc = Complex64::new(0.0, 0.0);
            for wa in &space {
                acc += wa.conj() * vals[k];
                k += 1;
            }
            *slot += wt * acc;
        }
    }
    Contractions { over_freq: out }
}

fn contract_for_phi(xi: &ChannelTensor, tau: f64, doppler: f64) -> Vec<Complex64> {
    let g = &xi.grid;
    let (time, freq, _) = path_factors(g, tau, 0.0, doppler);
    let vals = xi.values();
    let mut out = vec![Complex64::new(0.0, 0.0); g.num_antennas];
    let mut k = 0;
    for wt in &time {
        for wf in &freq {
            let w = (wt * wf).conj();
            for slot in out.iter_mut() {
                *slot += w * vals[k];
                k += 1;
            }
        }
    }
    out
}

fn contract_for_doppler(xi: &ChannelTensor, tau: f64, phi: f64) -> Vec<Complex64> {
    let g = &xi.grid;
    let (_, freq, space) = path_factors(g, tau, phi, 0.0);
    let vals = xi.values();
    let mut out = vec![Complex64::new(0.0, 0.0); g.num_packets];
    let mut k = 0;
    for slot in out.iter_mut() {
        for wf in &freq {
            let wf = wf.conj();
            for wa in &space {
                *slot += wf * wa.conj() * vals[k];
                k += 1;
            }
        }
    }
    out
}

/// `|Σ_i v_i · exp(j·2π·i·rate)|`.
fn ramp_correlation(v: &[Complex64], rate: f64) -> f64 {
    let step = Complex64::from_polar(1.0, 2.0 * PI * rate);
    let mut w = Complex64::new(1.0, 0.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for x in v {
        acc += w * x;
        w *= step;
    }
    acc.norm()
}

/// Strategy for the joint `(τ, φ, f_D)` maximization of `|z|` for one path.
pub trait InnerSearch {
    /// Returns the new `(τ, φ, f_D)` for a path whose current estimate is
    /// `current`, given its E-step residual.
    fn maximize(
        &mut self,
        residual: &ChannelTensor,
        current: &PathParams,
        bounds: &SearchBounds,
    ) -> Result<[f64; 3]>;
}

/// SAGE's M-step search: sequential coarse scan plus golden-section
/// refinement along delay, angle and Doppler.
#[derive(Debug, Clone)]
pub struct CoordinateSearch {
    pub config: SageConfig,
}

impl CoordinateSearch {
    pub fn new(config: SageConfig) -> Self {
        Self { config }
    }
}

fn scan_then_refine<F: FnMut(f64) -> f64>(
    lo: f64,
    hi: f64,
    points: usize,
    step: f64,
    golden: usize,
    current: f64,
    mut f: F,
) -> f64 {
    let (coarse, _) = grid_scan(lo, step, points, &mut f);
    let (fine, fine_val) =
        golden_section_max((coarse - step).max(lo - step), (coarse + step).min(hi + step), golden, &mut f);
    if fine_val >= f(current) {
        fine
    } else {
        current
    }
}

impl InnerSearch for CoordinateSearch {
    fn maximize(
        &mut self,
        residual: &ChannelTensor,
        current: &PathParams,
        bounds: &SearchBounds,
    ) -> Result<[f64; 3]> {
        bounds.validate()?;
        let g = residual.grid;
        let cfg = &self.config;
        let golden = cfg.golden_iterations;

        // Delay: periodic over the unambiguous range.
        let period = g.delay_range();
        let dfs = g.subcarrier_spacing;
        let c = contract_for_tau(residual, current.phi, current.doppler);
        let tau_step = (bounds.tau.1 - bounds.tau.0) / cfg.tau_points as f64;
        let tau = scan_then_refine(
            bounds.tau.0,
            bounds.tau.1 - tau_step,
            cfg.tau_points,
            tau_step,
            golden,
            current.tau,
            |tau| ramp_correlation(&c.over_freq, dfs * tau),
        );
        let tau = if bounds.tau == (0.0, period) {
            tau.rem_euclid(period)
        } else {
            tau.clamp(bounds.tau.0, bounds.tau.1)
        };

        let v = contract_for_phi(residual, tau, current.doppler);
        let ds = g.antenna_spacing;
        let phi_step = (bounds.phi.1 - bounds.phi.0) / (cfg.phi_points - 1) as f64;
        let phi = scan_then_refine(
            bounds.phi.0,
            bounds.phi.1,
            cfg.phi_points,
            phi_step,
            golden,
            current.phi,
            |phi| {
                let phi = phi.clamp(bounds.phi.0, bounds.phi.1);
                ramp_correlation(&v, ds * phi)
            },
        )
        .clamp(bounds.phi.0, bounds.phi.1);

        let w = contract_for_doppler(residual, tau, phi);
        let dt = g.packet_interval;
        let fd_step = (bounds.doppler.1 - bounds.doppler.0) / (cfg.doppler_points - 1) as f64;
        let doppler = scan_then_refine(
            bounds.doppler.0,
            bounds.doppler.1,
            cfg.doppler_points,
            fd_step,
            golden,
            current.doppler,
            |fd| {
                let fd = fd.clamp(bounds.doppler.0, bounds.doppler.1);
                ramp_correlation(&w, -fd * dt)
            },
        )
        .clamp(bounds.doppler.0, bounds.doppler.1);

        Ok([tau, phi, doppler])
    }
}

/// M-step for one path: sequential delay, angle and Doppler maximization of
/// `|z|`, then the closed-form gain `z/M`.
pub fn maximization_step(
    residual: &ChannelTensor,
    current: &PathParams,
    config: &SageConfig,
) -> Result<PathParams> {
    config.validate()?;
    if !current.is_finite() {
        return Err(Error::NonFinite(format!("current estimate {current:?}")));
    }
    let bounds = config.bounds(&residual.grid);
    let mut search = CoordinateSearch::new(config.clone());
    let [tau, phi, doppler] = search.maximize(residual, current, &bounds)?;
    Ok(closed_form_gain(residual, tau, phi, doppler))
}

/// Path with gain `z(τ, φ, f_D)/M`.
pub fn closed_form_gain(residual: &ChannelTensor, tau: f64, phi: f64, doppler: f64) -> PathParams {
    let z = correlator_z(tau, phi, doppler, residual);
    PathParams::new(z / residual.grid.len() as f64, tau, phi, doppler)
}

/// Normalized change between two estimates of one path.
fn relative_change(old: &PathParams, new: &PathParams, bounds: &SearchBounds, scale: f64) -> f64 {
    let span = |b: (f64, f64)| b.1 - b.0;
    let d_tau = (new.tau - old.tau).abs() / span(bounds.tau);
    let d_phi = (new.phi - old.phi).abs() / span(bounds.phi);
    let d_fd = (new.doppler - old.doppler).abs() / span(bounds.doppler);
    let d_alpha = (new.alpha - old.alpha).norm() / scale.max(f64::MIN_POSITIVE);
    d_tau.max(d_phi).max(d_fd).max(d_alpha)
}

/// Shared SAGE outer loop with a pluggable inner search.
pub fn refine_with<S: InnerSearch>(
    tensor: &ChannelTensor,
    initial: &[PathParams],
    config: &SageConfig,
    bounds: &SearchBounds,
    search: &mut S,
) -> Result<SageEstimate> {
    config.validate()?;
    bounds.validate()?;
    if initial.is_empty() {
        return Err(Error::invalid("initial estimate has no paths"));
    }
    if !tensor.all_finite() {
        return Err(Error::NonFinite("input tensor".into()));
    }
    if initial.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("initial estimate".into()));
    }
    let grid = tensor.grid;
    let mut paths: Vec<PathParams> = initial.to_vec();
    paths.sort_by(|a, b| b.alpha.norm().total_cmp(&a.alpha.norm()));

    // Running model Σ synth_path(θ_l); the residual is H − model.
    let mut model = reconstruct(&grid, &paths);
    let energy = |model: &ChannelTensor| (tensor - model).energy();
    let mut sweep_energies = vec![energy(&model)];
    let mut log = Vec::new();
    let mut iterations_used = 0;

    for iteration in 1..=config.max_iterations {
        iterations_used = iteration;
        let scale = paths.iter().map(|p| p.alpha.norm()).fold(0.0, f64::max);
        let mut max_change: f64 = 0.0;
        for l in 0..paths.len() {
            let old = paths[l];
            let old_path = synth_path(&grid, &old);
            // ξ_l = H − (model − s_l)
            let mut xi = tensor - &model;
            xi.accumulate(&old_path)?;
            let [tau, phi, doppler] = search.maximize(&xi, &old, bounds)?;
            let mut new = closed_form_gain(&xi, tau, phi, doppler);
            let old_fit = correlator_z(old.tau, old.phi, old.doppler, &xi).norm();
            if correlator_z(tau, phi, doppler, &xi).norm() < old_fit {
                new = closed_form_gain(&xi, old.tau, old.phi, old.doppler);
            }
            let new_path = synth_path(&grid, &new);
            for ((m, n), o) in model
                .values_mut()
                .iter_mut()
                .zip(new_path.values())
                .zip(old_path.values())
            {
                *m += n - o;
            }
            max_change = max_change.max(relative_change(&old, &new, bounds, scale));
            paths[l] = new;
            log.push(IterationRecord {
                iteration,
                path: l,
                tau: new.tau,
                phi: new.phi,
                doppler: new.doppler,
                alpha_re: new.alpha.re,
                alpha_im: new.alpha.im,
                residual_energy: energy(&model),
            });
        }
        sweep_energies.push(energy(&model));
        if max_change < config.convergence_tol {
            break;
        }
    }

    paths.sort_by(|a, b| b.alpha.norm().total_cmp(&a.alpha.norm()));
    let final_residual_energy = energy(&reconstruct(&grid, &paths));
    Ok(SageEstimate {
        paths,
        iterations_used,
        final_residual_energy,
        sweep_energies,
        per_iteration_log: log,
    })
}

/// Initial per-path parameters from a coarse estimate (Doppler zero).
pub fn initial_paths(initial: &CoarseEstimate) -> Vec<PathParams> {
    initial.paths.iter().map(|p| p.with_doppler(0.0)).collect()
}

/// Refines a coarse estimate with SAGE.
pub fn sage_refine(
    tensor: &ChannelTensor,
    initial: &CoarseEstimate,
    config: &SageConfig,
) -> Result<SageEstimate> {
    sage_refine_paths(tensor, &initial_paths(initial), config)
}

pub fn sage_refine_paths(
    tensor: &ChannelTensor,
    initial: &[PathParams],
    config: &SageConfig,
) -> Result<SageEstimate> {
    let bounds = config.bounds(&tensor.grid);
    let mut search = CoordinateSearch::new(config.clone());
    refine_with(tensor, initial, config, &bounds, &mut search)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chanmodel::{add_noise, synth_channel};
    use crate::music::{coarse_estimate, MusicConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> MeasurementGrid {
        MeasurementGrid::default()
    }

    fn random_path<R: Rng>(rng: &mut R, g: &MeasurementGrid) -> PathParams {
        PathParams::new(
            Complex64::from_polar(rng.random_range(0.2..1.0), rng.random_range(-PI..PI)),
            rng.random_range(0.0..1e-6),
            rng.random_range(-0.9..0.9),
            rng.random_range(-3000.0..3000.0),
        )
        .tap_check(g)
    }

    trait TapCheck {
        fn tap_check(self, g: &MeasurementGrid) -> Self;
    }

    impl TapCheck for PathParams {
        fn tap_check(self, g: &MeasurementGrid) -> Self {
            self.validate(g, 1e4).unwrap();
            self
        }
    }

    /// Explicit loop over all lattice points.
    fn z_oracle(tau: f64, phi: f64, fd: f64, xi: &ChannelTensor) -> Complex64 {
        let g = &xi.grid;
        let mut z = Complex64::new(0.0, 0.0);
        for t in 0..g.num_packets {
            for f in 0..g.num_subcarriers {
                for a in 0..g.num_antennas {
                    let ph = 2.0
                        * PI
                        * (f as f64 * g.subcarrier_spacing * tau + a as f64 * g.antenna_spacing * phi
                            - fd * t as f64 * g.packet_interval);
                    let m = crate::chanmodel::GridIndex::new(t, f, a);
                    z += Complex64::from_polar(1.0, ph) * xi.get(m).unwrap();
                }
            }
        }
        z
    }

    #[test]
    fn e_step_single_path_is_identity() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = synth_channel(&g, &[random_path(&mut rng, &g)], 0.1, &mut rng).unwrap();
        let xi = expectation_step(&h, &[random_path(&mut rng, &g)], 0).unwrap();
        assert_eq!(xi, h);
        assert!(expectation_step(&h, &[], 0).is_err());
    }

    #[test]
    fn e_step_perfect_cancellation() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = [random_path(&mut rng, &g), random_path(&mut rng, &g)];
        let h = synth_channel(&g, &p, 0.0, &mut rng).unwrap();
        let guess = [random_path(&mut rng, &g), p[1]];
        let xi = expectation_step(&h, &guess, 0).unwrap();
        let want = synth_path(&g, &p[0]);
        for (a, b) in xi.values().iter().zip(want.values()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn e_step_matches_loop_oracle() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p: Vec<_> = (0..3).map(|_| random_path(&mut rng, &g)).collect();
        let mut h = synth_channel(&g, &p, 0.0, &mut rng).unwrap();
        add_noise(&mut h, 0.2, &mut rng);
        let est: Vec<_> = (0..3).map(|_| random_path(&mut rng, &g)).collect();
        let xi = expectation_step(&h, &est, 1).unwrap();
        for t in 0..g.num_packets {
            for f in 0..g.num_subcarriers {
                for a in 0..g.num_antennas {
                    let m = crate::chanmodel::GridIndex::new(t, f, a);
                    let mut want = h.get(m).unwrap();
                    for k in [0usize, 2] {
                        let ph = crate::chanmodel::steering_phase(&g, m, &est[k]).unwrap();
                        want -= est[k].alpha * Complex64::from_polar(1.0, -ph);
                    }
                    assert!((xi.get(m).unwrap() - want).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn correlator_coherent_sum() {
        let g = grid();
        let alpha = Complex64::from_polar(0.7, 0.4);
        let p = PathParams::new(alpha, 3.3e-7, 0.21, 1234.0);
        let xi = synth_path(&g, &p);
        let z = correlator_z(p.tau, p.phi, p.doppler, &xi);
        assert!((z - alpha * g.len() as f64).norm() < 1e-9 * g.len() as f64);
    }

    #[test]
    fn correlator_dirichlet_null() {
        let g = grid();
        assert!(g.num_packets >= 16);
        let alpha = Complex64::from_polar(1.0, 0.0);
        let p = PathParams::new(alpha, 3.3e-7, 0.21, 1234.0);
        let xi = synth_path(&g, &p);
        let off = 1.0 / (g.num_packets as f64 * g.packet_interval);
        let z = correlator_z(p.tau, p.phi, p.doppler + off, &xi);
        assert!(z.norm() < 0.05 * g.len() as f64, "{}", z.norm());
    }

    #[test]
    fn correlator_matches_brute_force() {
        let g = MeasurementGrid {
            num_packets: 5,
            num_subcarriers: 7,
            ..grid()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut xi = ChannelTensor::zeros(0, g);
        add_noise(&mut xi, 1.0, &mut rng);
        for _ in 0..5 {
            let (tau, phi, fd) = (
                rng.random_range(0.0..g.delay_range()),
                rng.random_range(-1.0..1.0),
                rng.random_range(-5000.0..5000.0),
            );
            let a = correlator_z(tau, phi, fd, &xi);
            let b = z_oracle(tau, phi, fd, &xi);
            assert!((a - b).norm() < 1e-10 * (1.0 + b.norm()));
        }
    }

    #[test]
    fn correlator_magnitude_ignores_global_phase() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut xi = synth_path(&g, &random_path(&mut rng, &g));
        add_noise(&mut xi, 0.5, &mut rng);
        let rot = xi.scale(Complex64::from_polar(1.0, 2.2));
        let a = correlator_z(2e-7, 0.1, 500.0, &xi).norm();
        let b = correlator_z(2e-7, 0.1, 500.0, &rot).norm();
        assert!((a - b).abs() < 1e-9 * a);
    }

    #[test]
    fn m_step_recovers_single_path_from_nearby_start() {
        let g = grid();
        let cfg = SageConfig::default();
        let (tau_step, phi_step, fd_step) = cfg.steps(&g);
        let truth = PathParams::new(Complex64::from_polar(0.9, -0.6), 4.07e-7, 0.337, 2211.0);
        let xi = synth_path(&g, &truth);
        let start = PathParams::new(
            Complex64::new(0.5, 0.0),
            truth.tau + 0.4 * tau_step,
            truth.phi - 0.45 * phi_step,
            truth.doppler + 0.3 * fd_step,
        );
        let got = maximization_step(&xi, &start, &cfg).unwrap();
        assert!((got.tau - truth.tau).abs() / truth.tau < 1e-4);
        assert!((got.phi - truth.phi).abs() / truth.phi.abs() < 1e-4);
        assert!((got.doppler - truth.doppler).abs() / truth.doppler.abs() < 1e-4);
        assert!((got.alpha - truth.alpha).norm() / truth.alpha.norm() < 1e-4);
    }

    #[test]
    fn m_step_fixed_point_and_closed_form_gain() {
        let g = grid();
        let cfg = SageConfig::default();
        let (tau_step, phi_step, fd_step) = cfg.steps(&g);
        let alpha = Complex64::from_polar(2.0, PI / 3.0);
        let truth = PathParams::new(alpha, 6.1e-7, -0.52, -1800.0);
        let xi = synth_path(&g, &truth);
        let got = maximization_step(&xi, &truth, &cfg).unwrap();
        let tol = 2.0 * 0.618f64.powi(cfg.golden_iterations as i32);
        assert!((got.tau - truth.tau).abs() <= tol * tau_step);
        assert!((got.phi - truth.phi).abs() <= tol * phi_step);
        assert!((got.doppler - truth.doppler).abs() <= tol * fd_step);
        assert!((got.alpha - alpha).norm() < 1e-6);
    }

    #[test]
    fn degenerate_bounds_rejected() {
        let g = grid();
        let xi = ChannelTensor::zeros(0, g);
        let cfg = SageConfig {
            doppler_search_range: Some(-1.0),
            ..Default::default()
        };
        let p = PathParams::new(Complex64::new(1.0, 0.0), 0.0, 0.0, 0.0);
        assert!(matches!(maximization_step(&xi, &p, &cfg), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn refine_two_paths_noiseless() {
        let g = grid();
        let paths = [
            PathParams::new(Complex64::from_polar(1.0, 0.3), 1.4e-7, 0.25, 1900.0),
            PathParams::new(Complex64::from_polar(0.5, -1.2), 6.9e-7, -0.4, -2600.0),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = synth_channel(&g, &paths, 0.0, &mut rng).unwrap();
        let coarse = coarse_estimate(&h, &MusicConfig::default()).unwrap();
        let est = sage_refine(&h, &coarse, &SageConfig::default()).unwrap();
        let ccne = crate::metrics::ccne(est.reconstruct(&g).values(), h.values()).unwrap();
        assert!(ccne > 40.0, "ccne {ccne}");
        for w in est.sweep_energies.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-18);
        }
    }

    #[test]
    fn refine_zero_doppler_path() {
        let g = grid();
        let cfg = SageConfig::default();
        let p = PathParams::new(Complex64::from_polar(1.0, 0.3), 2.4e-7, -0.15, 0.0);
        let h = synth_path(&g, &p);
        let coarse = coarse_estimate(&h, &MusicConfig::default()).unwrap();
        let est = sage_refine(&h, &coarse, &cfg).unwrap();
        let (_, _, fd_step) = cfg.steps(&g);
        assert!(est.paths[0].doppler.abs() < 0.01 * fd_step);
    }

    #[test]
    fn refine_rejects_non_finite_input() {
        let g = grid();
        let mut h = ChannelTensor::zeros(0, g);
        h.values_mut()[3] = Complex64::new(f64::NAN, 0.0);
        let init = [PathParams::new(Complex64::new(1.0, 0.0), 0.0, 0.0, 0.0)];
        assert!(matches!(
            sage_refine_paths(&h, &init, &SageConfig::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn residual_bookkeeping_and_monotone_energy() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let paths: Vec<_> = (0..3).map(|_| random_path(&mut rng, &g)).collect();
        let mut h = synth_channel(&g, &paths, 0.0, &mut rng).unwrap();
        add_noise(&mut h, 0.1, &mut rng);
        let coarse = coarse_estimate(&h, &MusicConfig {
            model_order_override: Some(3),
            ..Default::default()
        })
        .unwrap();
        let est = sage_refine(&h, &coarse, &SageConfig::default()).unwrap();
        for w in est.sweep_energies.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", est.sweep_energies);
        }
        let recon = est.reconstruct(&g);
        let residual = &h - &recon;
        let total = &recon + &residual;
        for (a, b) in total.values().iter().zip(h.values()) {
            assert!((a - b).norm() < 1e-12);
        }
        assert!((residual.energy() - est.final_residual_energy).abs() < 1e-9 * h.energy());
        let mut buf = Vec::new();
        est.write_log_jsonl(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().lines().count(),
            est.per_iteration_log.len()
        );
    }
}
