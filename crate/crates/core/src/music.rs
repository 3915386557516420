//! Weighted MUSIC over the joint delay/angle domain.
//!
//! Packets and sliding subcarrier/antenna windows act as snapshots of a
//! smoothed covariance. Its noise subspace, weighted by inverse eigenvalues,
//! gives a pseudo-spectrum whose peaks seed the SAGE refinement.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chanmodel::{path_factors, ChannelTensor, MeasurementGrid, StaticPathParams};
use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest are treated as exact zeros.
const EIGEN_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MusicConfig {
    /// Subcarriers per smoothing window; half the band when unset.
    pub subcarrier_window: Option<usize>,
    /// Antennas per smoothing window; `S - 1` (at least 2) when unset.
    pub antenna_window: Option<usize>,
    /// Delay grid step in seconds; `1/(4·F·Δf)` when unset.
    pub tau_step: Option<f64>,
    pub phi_step: f64,
    pub model_order_override: Option<usize>,
    /// Minimum eigenvalue ratio that counts as a signal/noise gap.
    pub eigenvalue_gap_threshold: f64,
    /// Peak exclusion radius in grid cells.
    pub exclusion_radius: usize,
}

impl Default for MusicConfig {
    fn default() -> Self {
        Self {
            subcarrier_window: None,
            antenna_window: None,
            tau_step: None,
            phi_step: 2.0 / 64.0,
            model_order_override: None,
            eigenvalue_gap_threshold: 20.0,
            exclusion_radius: 2,
        }
    }
}

/// Window sizes and grid steps after defaults are applied to a concrete grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MusicLayout {
    pub subcarrier_window: usize,
    pub antenna_window: usize,
    pub tau_step: f64,
    pub phi_step: f64,
}

impl MusicLayout {
    pub fn dimension(&self) -> usize {
        self.subcarrier_window * self.antenna_window
    }
}

impl MusicConfig {
    pub fn layout(&self, grid: &MeasurementGrid) -> Result<MusicLayout> {
        let wf = self
            .subcarrier_window
            .unwrap_or((grid.num_subcarriers / 2).max(2));
        let wa = self
            .antenna_window
            .unwrap_or(grid.num_antennas.saturating_sub(1).max(2));
        if wf < 2 || wf > grid.num_subcarriers {
            return Err(Error::invalid(format!(
                "subcarrier window {wf} must lie in 2..={}",
                grid.num_subcarriers
            )));
        }
        if wa < 2 || wa > grid.num_antennas {
            return Err(Error::invalid(format!(
                "antenna window {wa} must lie in 2..={}",
                grid.num_antennas
            )));
        }
        let tau_step = self
            .tau_step
            .unwrap_or(1.0 / (4.0 * grid.num_subcarriers as f64 * grid.subcarrier_spacing));
        if !(tau_step > 0.0) || !(self.phi_step > 0.0) {
            return Err(Error::invalid("grid resolutions must be positive"));
        }
        if !(self.eigenvalue_gap_threshold > 1.0) {
            return Err(Error::invalid("eigenvalue gap threshold must exceed 1"));
        }
        Ok(MusicLayout {
            subcarrier_window: wf,
            antenna_window: wa,
            tau_step,
            phi_step: self.phi_step,
        })
    }
}

/// How the model order was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderSource {
    Override,
    GapDetector,
}

/// MUSIC pseudo-spectrum on a `taus × phis` grid, row-major in delay.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub taus: Vec<f64>,
    pub phis: Vec<f64>,
    pub values: Vec<f64>,
}

impl Spectrum {
    pub fn at(&self, i_tau: usize, i_phi: usize) -> f64 {
        self.values[i_tau * self.phis.len() + i_phi]
    }

    pub fn argmax(&self) -> (usize, usize) {
        let k = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0;
        (k / self.phis.len(), k % self.phis.len())
    }

    pub fn median(&self) -> f64 {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    /// Local maxima (delay axis circular), greedily thinned so no two lie
    /// within `radius` cells of each other. Sorted by decreasing value.
    pub fn peaks(&self, count: usize, radius: usize) -> Vec<(usize, usize)> {
        let nt = self.taus.len();
        let np = self.phis.len();
        let mut candidates = Vec::new();
        for i in 0..nt {
            for j in 0..np {
                let v = self.at(i, j);
                let mut is_max = true;
                'nb: for di in [nt - 1, 0, 1] {
                    for dj in [-1i64, 0, 1] {
                        if di == 0 && dj == 0 {
                            continue;
                        }
                        let jj = j as i64 + dj;
                        if jj < 0 || jj >= np as i64 {
                            continue;
                        }
                        if self.at((i + di) % nt, jj as usize) > v {
                            is_max = false;
                            break 'nb;
                        }
                    }
                }
                if is_max {
                    candidates.push((i, j, v));
                }
            }
        }
        candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        let mut picked: Vec<(usize, usize)> = Vec::new();
        for (i, j, _) in candidates {
            if picked.len() == count {
                break;
            }
            let clear = picked.iter().all(|&(pi, pj)| {
                let d = i.abs_diff(pi);
                let dt = d.min(nt - d);
                dt > radius || j.abs_diff(pj) > radius
            });
            if clear {
                picked.push((i, j));
            }
        }
        picked
    }
}

/// Result of the coarse stage.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseEstimate {
    pub paths: Vec<StaticPathParams>,
    pub spectrum: Spectrum,
    pub estimated_order: usize,
    pub order_source: OrderSource,
}

/// Hermitian eigendecomposition with eigenvalues sorted descending.
pub struct EigenSystem {
    pub values: Vec<f64>,
    /// Column `k` pairs with `values[k]`.
    pub vectors: DMatrix<Complex64>,
}

pub fn eigen_descending(cov: &DMatrix<Complex64>) -> EigenSystem {
    let eig = cov.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let n = cov.nrows();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    EigenSystem {
        values: order.iter().map(|&k| eig.eigenvalues[k]).collect(),
        vectors,
    }
}

/// Average outer product of sliding-window snapshots across packets and
/// window offsets. Snapshot entries are ordered subcarrier-major.
pub fn smoothed_covariance(
    tensor: &ChannelTensor,
    config: &MusicConfig,
) -> Result<DMatrix<Complex64>> {
    let layout = config.layout(&tensor.grid)?;
    Ok(covariance_with_layout(tensor, &layout))
}

fn covariance_with_layout(tensor: &ChannelTensor, layout: &MusicLayout) -> DMatrix<Complex64> {
    let g = &tensor.grid;
    let (wf, wa) = (layout.subcarrier_window, layout.antenna_window);
    let n = wf * wa;
    let mut cov = DMatrix::<Complex64>::zeros(n, n);
    let mut snap = vec![Complex64::new(0.0, 0.0); n];
    let mut count = 0usize;
    for t in 0..g.num_packets {
        let packet = tensor.packet(t);
        for f0 in 0..=(g.num_subcarriers - wf) {
            for a0 in 0..=(g.num_antennas - wa) {
                for i in 0..wf {
                    for j in 0..wa {
                        snap[i * wa + j] = packet[(f0 + i) * g.num_antennas + a0 + j];
                    }
                }
                for c in 0..n {
                    let xc = snap[c].conj();
                    for r in 0..n {
                        cov[(r, c)] += snap[r] * xc;
                    }
                }
                count += 1;
            }
        }
    }
    cov / Complex64::new(count as f64, 0.0)
}

/// Number of signal eigenvalues: the position of the last consecutive ratio
/// exceeding `threshold`, or 1 when no such gap exists.
///
/// Eigenvalues below `1e-12` of the largest are clamped to that floor first,
/// so a drop into numerical noise counts as one gap. Taking the last gap
/// keeps the result non-increasing in `threshold`.
pub fn estimate_order(eigenvalues: &[f64], threshold: f64) -> Result<usize> {
    if eigenvalues.is_empty() {
        return Err(Error::invalid("no eigenvalues supplied"));
    }
    let top = eigenvalues[0].max(0.0);
    if top == 0.0 {
        return Ok(1);
    }
    let floor = top * EIGEN_FLOOR;
    let clamped: Vec<f64> = eigenvalues.iter().map(|v| v.max(floor)).collect();
    let last_gap = clamped
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] / w[1] > threshold)
        .map(|(i, _)| i + 1)
        .last();
    Ok(last_gap.unwrap_or(1))
}

/// Weighted MUSIC pseudo-spectrum for a given signal-subspace dimension.
pub fn music_spectrum(
    covariance: &DMatrix<Complex64>,
    grid: &MeasurementGrid,
    config: &MusicConfig,
    order: usize,
) -> Result<Spectrum> {
    let layout = config.layout(grid)?;
    if covariance.nrows() != layout.dimension() || !covariance.is_square() {
        return Err(Error::dim(format!(
            "covariance is {}x{}, window implies {}",
            covariance.nrows(),
            covariance.ncols(),
            layout.dimension()
        )));
    }
    let eig = eigen_descending(covariance);
    spectrum_from_eigen(&eig, grid, &layout, order)
}

fn spectrum_from_eigen(
    eig: &EigenSystem,
    grid: &MeasurementGrid,
    layout: &MusicLayout,
    order: usize,
) -> Result<Spectrum> {
    let n = layout.dimension();
    if order >= n {
        return Err(Error::invalid(format!(
            "no noise subspace: order {order} with window dimension {n}; \
             enlarge the smoothing window or assume fewer paths"
        )));
    }
    let floor = eig.values[0].max(0.0) * EIGEN_FLOOR;
    let noise: Vec<usize> = (order..n).collect();
    let weights: Vec<f64> = noise
        .iter()
        .map(|&k| 1.0 / eig.values[k].max(floor).max(f64::MIN_POSITIVE))
        .collect();

    let nt = (grid.delay_range() / layout.tau_step).round().max(1.0) as usize;
    let np = (2.0 / layout.phi_step).round().max(1.0) as usize;
    let taus: Vec<f64> = (0..nt).map(|i| i as f64 * layout.tau_step).collect();
    let phis: Vec<f64> = (0..np).map(|j| -1.0 + j as f64 * layout.phi_step).collect();
    let (wf, wa) = (layout.subcarrier_window, layout.antenna_window);

    // conj(a_s(phi)) per angle, reused across delay rows.
    let space_conj: Vec<Vec<Complex64>> = phis
        .iter()
        .map(|&phi| {
            (0..wa)
                .map(|j| Complex64::from_polar(1.0, 2.0 * PI * j as f64 * grid.antenna_spacing * phi))
                .collect()
        })
        .collect();

    let rows: Vec<Vec<f64>> = taus
        .par_iter()
        .map(|&tau| {
            let freq_conj: Vec<Complex64> = (0..wf)
                .map(|i| {
                    Complex64::from_polar(1.0, 2.0 * PI * i as f64 * grid.subcarrier_spacing * tau)
                })
                .collect();
            // partial[j][k] = sum_i conj(a_f)_i * E[(i, j), k]
            let mut partial = vec![vec![Complex64::new(0.0, 0.0); noise.len()]; wa];
            for (kk, &k) in noise.iter().enumerate() {
                let col = eig.vectors.column(k);
                for i in 0..wf {
                    for (j, p) in partial.iter_mut().enumerate() {
                        p[kk] += freq_conj[i] * col[i * wa + j];
                    }
                }
            }
            space_conj
                .iter()
                .map(|sc| {
                    let mut denom = 0.0;
                    for (kk, w) in weights.iter().enumerate() {
                        let mut v = Complex64::new(0.0, 0.0);
                        for j in 0..wa {
                            v += sc[j] * partial[j][kk];
                        }
                        denom += w * v.norm_sqr();
                    }
                    1.0 / denom.max(f64::MIN_POSITIVE)
                })
                .collect()
        })
        .collect();

    Ok(Spectrum {
        taus,
        phis,
        values: rows.into_iter().flatten().collect(),
    })
}

/// Least-squares gains for fixed static steering (Doppler zero).
pub fn least_squares_gains(
    tensor: &ChannelTensor,
    locations: &[(f64, f64)],
) -> Result<Vec<Complex64>> {
    let g = &tensor.grid;
    let columns: Vec<Vec<Complex64>> = locations
        .iter()
        .map(|&(tau, phi)| {
            crate::chanmodel::synth_path(g, &crate::chanmodel::PathParams::new(
                Complex64::new(1.0, 0.0),
                tau,
                phi,
                0.0,
            ))
            .into_values()
        })
        .collect();
    let l = columns.len();
    let mut gram = DMatrix::<Complex64>::zeros(l, l);
    let mut rhs = DMatrix::<Complex64>::zeros(l, 1);
    for r in 0..l {
        for c in 0..l {
            gram[(r, c)] = columns[r]
                .iter()
                .zip(&columns[c])
                .map(|(x, y)| x.conj() * y)
                .sum();
        }
        rhs[(r, 0)] = columns[r]
            .iter()
            .zip(tensor.values())
            .map(|(x, h)| x.conj() * h)
            .sum();
    }
    let solution = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::invalid(format!("gain fit failed: {e}")))?
            * rhs,
    };
    Ok(solution.column(0).iter().copied().collect())
}

/// Coarse delay/angle/gain estimate for each detected path (Doppler zero).
pub fn coarse_estimate(tensor: &ChannelTensor, config: &MusicConfig) -> Result<CoarseEstimate> {
    if !tensor.all_finite() {
        return Err(Error::NonFinite("input tensor".into()));
    }
    let layout = config.layout(&tensor.grid)?;
    let cov = covariance_with_layout(tensor, &layout);
    let eig = eigen_descending(&cov);
    let max_order = layout.dimension() - 1;
    let (order, source) = match config.model_order_override {
        Some(l) if l >= 1 => (l.min(max_order), OrderSource::Override),
        Some(_) => return Err(Error::invalid("model order override must be at least 1")),
        None => (
            estimate_order(&eig.values, config.eigenvalue_gap_threshold)?.min(max_order),
            OrderSource::GapDetector,
        ),
    };
    let spectrum = spectrum_from_eigen(&eig, &tensor.grid, &layout, order)?;
    let peaks = spectrum.peaks(order, config.exclusion_radius);
    let locations: Vec<(f64, f64)> = peaks
        .iter()
        .map(|&(i, j)| (spectrum.taus[i], spectrum.phis[j]))
        .collect();
    let gains = least_squares_gains(tensor, &locations)?;
    let paths = locations
        .iter()
        .zip(gains)
        .map(|(&(tau, phi), alpha)| StaticPathParams { alpha, tau, phi })
        .collect::<Vec<_>>();
    Ok(CoarseEstimate {
        estimated_order: paths.len(),
        paths,
        spectrum,
        order_source: source,
    })
}

/// Unit steering vector over one smoothing window (for diagnostics/tests).
pub fn window_steering(grid: &MeasurementGrid, layout: &MusicLayout, tau: f64, phi: f64) -> Vec<Complex64> {
    let (_, freq, space) = path_factors(grid, tau, phi, 0.0);
    let mut v = Vec::with_capacity(layout.dimension());
    for wf in freq.iter().take(layout.subcarrier_window) {
        for wa in space.iter().take(layout.antenna_window) {
            v.push(wf * wa);
        }
    }
    v
}
