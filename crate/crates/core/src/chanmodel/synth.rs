use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{ChannelTensor, GridIndex, MeasurementGrid, PathParams, StaticPathParams};
use crate::error::{Error, Result};

/// Phase of lattice element `m` relative to `(0, 0, 0)` for one path.
pub fn steering_phase(grid: &MeasurementGrid, m: GridIndex, theta: &PathParams) -> Result<f64> {
    if !grid.contains(m) {
        return Err(Error::Index(format!("{m:?} outside grid")));
    }
    let df = m.f as f64 * grid.subcarrier_spacing;
    let ds = m.a as f64 * grid.antenna_spacing;
    let dt = m.t as f64 * grid.packet_interval;
    Ok(2.0 * PI * (df * theta.tau + ds * theta.phi - theta.doppler * dt))
}

/// Unit phasors along each axis: `exp(+j2π f_D tΔt)`, `exp(-j2π fΔf τ)`,
/// `exp(-j2π aΔs φ)`. Their outer product is the unit-gain path response.
pub fn path_factors(
    grid: &MeasurementGrid,
    tau: f64,
    phi: f64,
    doppler: f64,
) -> (Vec<Complex64>, Vec<Complex64>, Vec<Complex64>) {
    let time = (0..grid.num_packets)
        .map(|t| Complex64::from_polar(1.0, 2.0 * PI * doppler * t as f64 * grid.packet_interval))
        .collect();
    let freq = (0..grid.num_subcarriers)
        .map(|f| Complex64::from_polar(1.0, -2.0 * PI * f as f64 * grid.subcarrier_spacing * tau))
        .collect();
    let space = (0..grid.num_antennas)
        .map(|a| Complex64::from_polar(1.0, -2.0 * PI * a as f64 * grid.antenna_spacing * phi))
        .collect();
    (time, freq, space)
}

fn fill_path(grid: &MeasurementGrid, theta: &PathParams, out: &mut [Complex64]) {
    let (time, freq, space) = path_factors(grid, theta.tau, theta.phi, theta.doppler);
    let mut k = 0;
    for wt in &time {
        let at = theta.alpha * wt;
        for wf in &freq {
            let atf = at * wf;
            for wa in &space {
                out[k] += atf * wa;
                k += 1;
            }
        }
    }
}

/// Noiseless response of a single path.
pub fn synth_path(grid: &MeasurementGrid, theta: &PathParams) -> ChannelTensor {
    let mut values = vec![Complex64::new(0.0, 0.0); grid.len()];
    fill_path(grid, theta, &mut values);
    ChannelTensor::from_values_unchecked(0, *grid, values)
}

/// Response of a path with its Doppler set to zero.
pub fn synth_static_path(grid: &MeasurementGrid, theta: &StaticPathParams) -> ChannelTensor {
    synth_path(grid, &theta.with_doppler(0.0))
}

/// Sum of path responses plus circularly-symmetric Gaussian noise with
/// `E|n|² = noise_std²`.
pub fn synth_channel<R: Rng + ?Sized>(
    grid: &MeasurementGrid,
    paths: &[PathParams],
    noise_std: f64,
    rng: &mut R,
) -> Result<ChannelTensor> {
    if paths.is_empty() {
        return Err(Error::invalid("at least one path is required"));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::invalid(format!("noise std {noise_std} must be >= 0")));
    }
    let mut values = vec![Complex64::new(0.0, 0.0); grid.len()];
    for p in paths {
        fill_path(grid, p, &mut values);
    }
    let mut tensor = ChannelTensor::from_values_unchecked(0, *grid, values);
    if noise_std > 0.0 {
        add_noise(&mut tensor, noise_std, rng);
    }
    Ok(tensor)
}

/// Adds complex white Gaussian noise with per-component std `noise_std/√2`.
pub fn add_noise<R: Rng + ?Sized>(tensor: &mut ChannelTensor, noise_std: f64, rng: &mut R) {
    let s = noise_std / 2f64.sqrt();
    for v in tensor.values_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *v += Complex64::new(re * s, im * s);
    }
}

/// Noise std giving the requested SNR against a noiseless tensor's RMS.
pub fn noise_std_for_snr(clean: &ChannelTensor, snr_db: f64) -> f64 {
    clean.rms() / 10f64.powf(snr_db / 20.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> MeasurementGrid {
        MeasurementGrid::new(4, 6, 3, 1e-3, 120e3, 0.5, 60e9).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Direct per-element evaluation of `alpha * exp(-j * phase)`.
    fn element_oracle(grid: &MeasurementGrid, theta: &PathParams) -> Vec<Complex64> {
        let mut out = Vec::new();
        for t in 0..grid.num_packets {
            for f in 0..grid.num_subcarriers {
                for a in 0..grid.num_antennas {
                    let ph = 2.0 * PI * (f as f64 * grid.subcarrier_spacing * theta.tau)
                        + 2.0 * PI * (a as f64 * grid.antenna_spacing * theta.phi)
                        - 2.0 * PI * (theta.doppler * t as f64 * grid.packet_interval);
                    out.push(theta.alpha * Complex64::from_polar(1.0, -ph));
                }
            }
        }
        out
    }

    #[test]
    fn reference_element_has_zero_phase() {
        let theta = PathParams::new(c(1.0, 0.0), 1.3e-6, 0.4, -777.0);
        assert_eq!(steering_phase(&grid(), GridIndex::new(0, 0, 0), &theta).unwrap(), 0.0);
    }

    #[test]
    fn pure_doppler_phase() {
        let theta = PathParams::new(c(1.0, 0.0), 0.0, 0.0, 100.0);
        let p = steering_phase(&grid(), GridIndex::new(1, 0, 0), &theta).unwrap();
        assert!((p - (-2.0 * PI * 0.1)).abs() < 1e-12);
    }

    #[test]
    fn steering_phase_matches_term_by_term_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = grid();
        for _ in 0..20 {
            let theta = PathParams::new(
                c(1.0, 0.0),
                rng.random_range(0.0..g.delay_range()),
                rng.random_range(-1.0..1.0),
                rng.random_range(-400.0..400.0),
            );
            let m = GridIndex::new(2, 3, 1);
            let freq_term = 3.0 * 120e3 * theta.tau;
            let ant_term = 1.0 * 0.5 * theta.phi;
            let time_term = theta.doppler * 2.0 * 1e-3;
            let want = 2.0 * PI * (freq_term + ant_term - time_term);
            let got = steering_phase(&g, m, &theta).unwrap();
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn steering_phase_rejects_out_of_bounds() {
        let theta = PathParams::new(c(1.0, 0.0), 0.0, 0.0, 0.0);
        assert!(steering_phase(&grid(), GridIndex::new(4, 0, 0), &theta).is_err());
    }

    #[test]
    fn zero_parameters_give_constant_tensor() {
        let ones = synth_path(&grid(), &PathParams::new(c(1.0, 0.0), 0.0, 0.0, 0.0));
        assert!(ones.values().iter().all(|v| (v - c(1.0, 0.0)).norm() < 1e-15));
        let a = Complex64::from_polar(0.5, PI / 4.0);
        let k = synth_path(&grid(), &PathParams::new(a, 0.0, 0.0, 0.0));
        assert!(k.values().iter().all(|v| (v - a).norm() < 1e-15));
    }

    #[test]
    fn synth_path_matches_element_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = grid();
        for _ in 0..10 {
            let theta = PathParams::new(
                Complex64::from_polar(rng.random_range(0.1..2.0), rng.random_range(-PI..PI)),
                rng.random_range(0.0..g.delay_range()),
                rng.random_range(-1.0..1.0),
                rng.random_range(-450.0..450.0),
            );
            let got = synth_path(&g, &theta);
            for (x, y) in got.values().iter().zip(element_oracle(&g, &theta)) {
                assert!((x - y).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn opposite_paths_cancel() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = PathParams::new(c(1.0, 0.0), 2e-7, 0.3, 120.0);
        let q = PathParams { alpha: c(-1.0, 0.0), ..p };
        let h = synth_channel(&grid(), &[p, q], 0.0, &mut rng).unwrap();
        assert!(h.values().iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn channel_is_sum_of_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = grid();
        let paths: Vec<_> = (0..3)
            .map(|_| {
                PathParams::new(
                    Complex64::from_polar(rng.random_range(0.1..1.0), rng.random_range(-PI..PI)),
                    rng.random_range(0.0..g.delay_range()),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-450.0..450.0),
                )
            })
            .collect();
        let h = synth_channel(&g, &paths, 0.0, &mut rng).unwrap();
        let single = synth_channel(&g, &paths[..1], 0.0, &mut rng).unwrap();
        assert_eq!(single, synth_path(&g, &paths[0]));
        let oracles: Vec<_> = paths.iter().map(|p| element_oracle(&g, p)).collect();
        for (i, v) in h.values().iter().enumerate() {
            let want: Complex64 = oracles.iter().map(|o| o[i]).sum();
            assert!((v - want).norm() < 1e-12);
        }
    }

    #[test]
    fn empty_path_list_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(synth_channel(&grid(), &[], 0.0, &mut rng).is_err());
    }

    #[test]
    fn doppler_factorizes_out() {
        let g = grid();
        let theta = PathParams::new(c(0.7, -0.2), 3e-7, -0.45, 321.0);
        let dynamic = synth_path(&g, &theta);
        let still = synth_path(&g, &PathParams { doppler: 0.0, ..theta });
        for t in 0..g.num_packets {
            let ramp = Complex64::from_polar(1.0, 2.0 * PI * 321.0 * t as f64 * g.packet_interval);
            for f in 0..g.num_subcarriers {
                for a in 0..g.num_antennas {
                    let m = GridIndex::new(t, f, a);
                    let d = dynamic.get(m).unwrap();
                    let s = still.get(m).unwrap() * ramp;
                    assert!((d - s).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn noise_power_matches_request() {
        let g = MeasurementGrid::new(64, 64, 32, 1e-3, 120e3, 0.5, 60e9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut t = ChannelTensor::zeros(0, g);
        let sigma = 0.3;
        add_noise(&mut t, sigma, &mut rng);
        assert!(g.len() >= 100_000);
        let p = t.energy() / g.len() as f64;
        assert!((p / (sigma * sigma) - 1.0).abs() < 0.03, "{p}");
    }

    #[test]
    fn snr_conversion() {
        let g = grid();
        let h = synth_path(&g, &PathParams::new(c(2.0, 0.0), 0.0, 0.0, 0.0));
        assert!((noise_std_for_snr(&h, 20.0) - 0.2).abs() < 1e-12);
    }
}
