//! Conversions between path parameters / tensors and the real vectors the
//! networks consume.
//!
//! Path vectors are divided by the path gain so the networks only see the
//! delay/angle (and, for dynamic vectors, Doppler) structure; the gain is
//! multiplied back after prediction.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::chanmodel::{path_factors, ChannelTensor, MeasurementGrid, PathParams, StaticPathParams};
use crate::error::{Error, Result};

fn interleave(values: impl IntoIterator<Item = Complex64>) -> Vec<f64> {
    values.into_iter().flat_map(|v| [v.re, v.im]).collect()
}

fn deinterleave(v: &[f64]) -> Vec<Complex64> {
    v.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

/// `exp(+j2π·f_D·t·Δt)` over packets, re/im interleaved (length `2T`).
pub fn doppler_ramp(doppler: f64, grid: &MeasurementGrid) -> Vec<f64> {
    interleave(
        (0..grid.num_packets)
            .map(|t| Complex64::from_polar(1.0, 2.0 * PI * doppler * t as f64 * grid.packet_interval)),
    )
}

/// Doppler from the average phase increment of a (possibly noisy) ramp.
pub fn doppler_from_ramp(ramp: &[f64], grid: &MeasurementGrid) -> Result<f64> {
    if ramp.len() != 2 * grid.num_packets {
        return Err(Error::dim(format!(
            "ramp has {} values, grid needs {}",
            ramp.len(),
            2 * grid.num_packets
        )));
    }
    let r = deinterleave(ramp);
    let acc: Complex64 = r.windows(2).map(|w| w[1] * w[0].conj()).sum();
    if acc.norm() == 0.0 {
        return Ok(0.0);
    }
    Ok(acc.arg() / (2.0 * PI * grid.packet_interval))
}

/// Gain-normalized static response over `(f, a)`, length `2·F·S`.
pub fn static_path_vector(path: &StaticPathParams, grid: &MeasurementGrid) -> Vec<f64> {
    let (_, freq, space) = path_factors(grid, path.tau, path.phi, 0.0);
    interleave(freq.iter().flat_map(|wf| space.iter().map(move |wa| wf * wa)))
}

/// Gain-normalized dynamic response over `(t, f, a)`, length `2·T·F·S`.
pub fn dynamic_path_vector(path: &PathParams, grid: &MeasurementGrid) -> Vec<f64> {
    let unit = PathParams::new(Complex64::new(1.0, 0.0), path.tau, path.phi, path.doppler);
    interleave(crate::chanmodel::synth_path(grid, &unit).into_values())
}

/// Static vector scaled by `alpha` and repeated over every packet.
pub fn static_vector_to_tensor(
    v: &[f64],
    alpha: Complex64,
    grid: &MeasurementGrid,
    band_id: u32,
) -> Result<ChannelTensor> {
    let per_packet = grid.num_subcarriers * grid.num_antennas;
    if v.len() != 2 * per_packet {
        return Err(Error::dim(format!("static vector has {} values, need {}", v.len(), 2 * per_packet)));
    }
    let packet: Vec<Complex64> = deinterleave(v).into_iter().map(|x| alpha * x).collect();
    let values = (0..grid.num_packets).flat_map(|_| packet.iter().copied()).collect();
    ChannelTensor::new(band_id, *grid, values)
}

pub fn dynamic_vector_to_tensor(
    v: &[f64],
    alpha: Complex64,
    grid: &MeasurementGrid,
    band_id: u32,
) -> Result<ChannelTensor> {
    if v.len() != 2 * grid.len() {
        return Err(Error::dim(format!("dynamic vector has {} values, need {}", v.len(), 2 * grid.len())));
    }
    ChannelTensor::new(band_id, *grid, deinterleave(v).into_iter().map(|x| alpha * x).collect())
}
