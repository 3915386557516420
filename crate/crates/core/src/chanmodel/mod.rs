//! Measurement lattice, multipath channel synthesis and scene generation.
//!
//! A channel tensor is indexed by `(t, f, a)`: packet, subcarrier and receive
//! antenna. Each path contributes `alpha * exp(-j * phase)` with
//!
//! ```text
//! phase = 2π (f·Δf·τ + a·Δs·φ − f_D·t·Δt)
//! ```
//!
//! where `Δs` is the antenna spacing in wavelengths and `φ` is the sine of
//! the arrival angle. The constant `f_c·τ` term is folded into `alpha`.

mod io;
mod scene;
mod synth;

pub use io::{read_tensor, write_tensor, DatasetManifest, ManifestPath, ManifestScene};
pub use scene::{doppler_from_motion, generate_scene, Environment, Scene, SceneConfig};
pub use synth::{
    add_noise, noise_std_for_snr, path_factors, steering_phase, synth_channel, synth_path,
    synth_static_path,
};

use std::ops::{Add, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// One multipath component: complex gain, delay, angle (as sine) and Doppler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    pub alpha: Complex64,
    /// Delay in seconds.
    pub tau: f64,
    /// Sine of the arrival angle.
    pub phi: f64,
    /// Doppler shift in hertz.
    pub doppler: f64,
}

impl PathParams {
    pub fn new(alpha: Complex64, tau: f64, phi: f64, doppler: f64) -> Self {
        Self {
            alpha,
            tau,
            phi,
            doppler,
        }
    }

    pub fn to_static(&self) -> StaticPathParams {
        StaticPathParams {
            alpha: self.alpha,
            tau: self.tau,
            phi: self.phi,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.re.is_finite()
            && self.alpha.im.is_finite()
            && self.tau.is_finite()
            && self.phi.is_finite()
            && self.doppler.is_finite()
    }

    /// Checks the delay/angle/Doppler ranges against a grid and a Doppler bound.
    pub fn validate(&self, grid: &MeasurementGrid, doppler_max: f64) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::NonFinite(format!("path parameters {self:?}")));
        }
        if self.tau < 0.0 || self.tau >= grid.delay_range() {
            return Err(Error::invalid(format!(
                "delay {} s outside [0, {})",
                self.tau,
                grid.delay_range()
            )));
        }
        if self.phi.abs() > 1.0 {
            return Err(Error::invalid(format!("angle parameter {} outside [-1, 1]", self.phi)));
        }
        if self.doppler.abs() > doppler_max {
            return Err(Error::invalid(format!(
                "doppler {} Hz exceeds bound {doppler_max} Hz",
                self.doppler
            )));
        }
        Ok(())
    }
}

/// A path with its Doppler component removed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticPathParams {
    pub alpha: Complex64,
    pub tau: f64,
    pub phi: f64,
}

impl StaticPathParams {
    pub fn with_doppler(&self, doppler: f64) -> PathParams {
        PathParams::new(self.alpha, self.tau, self.phi, doppler)
    }
}

/// Index of one element of the measurement lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridIndex {
    pub t: usize,
    pub f: usize,
    pub a: usize,
}

impl GridIndex {
    pub fn new(t: usize, f: usize, a: usize) -> Self {
        Self { t, f, a }
    }
}

/// Sampling lattice over packets, subcarriers and antennas for one band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasurementGrid {
    pub num_packets: usize,
    pub num_subcarriers: usize,
    pub num_antennas: usize,
    /// Seconds between packets.
    pub packet_interval: f64,
    /// Hertz between subcarriers.
    pub subcarrier_spacing: f64,
    /// Antenna spacing in wavelengths.
    pub antenna_spacing: f64,
    /// Frequency of subcarrier 0, hertz.
    pub carrier_frequency: f64,
}

impl Default for MeasurementGrid {
    fn default() -> Self {
        Self {
            num_packets: 16,
            num_subcarriers: 64,
            num_antennas: 3,
            packet_interval: 50e-6,
            subcarrier_spacing: 120e3,
            antenna_spacing: 0.5,
            carrier_frequency: 60e9,
        }
    }
}

impl MeasurementGrid {
    pub fn new(
        num_packets: usize,
        num_subcarriers: usize,
        num_antennas: usize,
        packet_interval: f64,
        subcarrier_spacing: f64,
        antenna_spacing: f64,
        carrier_frequency: f64,
    ) -> Result<Self> {
        let grid = Self {
            num_packets,
            num_subcarriers,
            num_antennas,
            packet_interval,
            subcarrier_spacing,
            antenna_spacing,
            carrier_frequency,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_packets == 0 || self.num_subcarriers == 0 || self.num_antennas == 0 {
            return Err(Error::invalid("grid dimensions must be at least 1"));
        }
        let positive = [
            self.packet_interval,
            self.subcarrier_spacing,
            self.antenna_spacing,
            self.carrier_frequency,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid("grid spacings and carrier must be positive"));
        }
        Ok(())
    }

    /// Total number of lattice points `T·F·S`.
    pub fn len(&self) -> usize {
        self.num_packets * self.num_subcarriers * self.num_antennas
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, m: GridIndex) -> bool {
        m.t < self.num_packets && m.f < self.num_subcarriers && m.a < self.num_antennas
    }

    /// Flat offset of `m`; antennas vary fastest, packets slowest.
    pub fn offset(&self, m: GridIndex) -> usize {
        (m.t * self.num_subcarriers + m.f) * self.num_antennas + m.a
    }

    /// Unambiguous delay range `1/Δf`.
    pub fn delay_range(&self) -> f64 {
        1.0 / self.subcarrier_spacing
    }

    /// Unambiguous one-sided Doppler range `1/(2Δt)`.
    pub fn doppler_nyquist(&self) -> f64 {
        0.5 / self.packet_interval
    }

    /// Grid for the band starting `offset` subcarriers above this one.
    ///
    /// Antenna spacing is rescaled so both bands describe the same physical
    /// array.
    pub fn shifted_band(&self, offset: usize) -> Self {
        let carrier = self.carrier_frequency + offset as f64 * self.subcarrier_spacing;
        Self {
            carrier_frequency: carrier,
            antenna_spacing: self.antenna_spacing * carrier / self.carrier_frequency,
            ..*self
        }
    }

    /// The band directly above this one.
    pub fn adjacent_band(&self) -> Self {
        self.shifted_band(self.num_subcarriers)
    }
}

/// Complex channel response of one band over a [`MeasurementGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTensor {
    pub band_id: u32,
    pub grid: MeasurementGrid,
    values: Vec<Complex64>,
}

impl ChannelTensor {
    pub fn new(band_id: u32, grid: MeasurementGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::dim(format!(
                "tensor holds {} values, grid needs {}",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite("channel tensor entry".into()));
        }
        Ok(Self {
            band_id,
            grid,
            values,
        })
    }

    pub fn zeros(band_id: u32, grid: MeasurementGrid) -> Self {
        Self {
            band_id,
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub(crate) fn from_values_unchecked(
        band_id: u32,
        grid: MeasurementGrid,
        values: Vec<Complex64>,
    ) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            band_id,
            grid,
            values,
        }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn get(&self, m: GridIndex) -> Result<Complex64> {
        if !self.grid.contains(m) {
            return Err(Error::Index(format!("{m:?} outside grid")));
        }
        Ok(self.values[self.grid.offset(m)])
    }

    /// Squared Frobenius norm.
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn rms(&self) -> f64 {
        (self.energy() / self.values.len() as f64).sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..*self
        }
    }

    /// Element-wise product with another tensor on the same grid.
    pub fn hadamard(&self, other: &ChannelTensor) -> Result<Self> {
        self.check_same_grid(other)?;
        Ok(Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
            ..*self
        })
    }

    pub fn check_same_grid(&self, other: &ChannelTensor) -> Result<()> {
        if self.grid.num_packets != other.grid.num_packets
            || self.grid.num_subcarriers != other.grid.num_subcarriers
            || self.grid.num_antennas != other.grid.num_antennas
        {
            return Err(Error::dim("tensors live on different grids"));
        }
        Ok(())
    }

    /// In-place `self += other`.
    pub fn accumulate(&mut self, other: &ChannelTensor) -> Result<()> {
        self.check_same_grid(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
        Ok(())
    }

    /// Slice at packet `t` as an `F·S` vector (antenna fastest).
    pub fn packet(&self, t: usize) -> &[Complex64] {
        let n = self.grid.num_subcarriers * self.grid.num_antennas;
        &self.values[t * n..(t + 1) * n]
    }
}

impl Add for &ChannelTensor {
    type Output = ChannelTensor;

    fn add(self, rhs: &ChannelTensor) -> ChannelTensor {
        assert_eq!(self.values.len(), rhs.values.len(), "grid mismatch");
        ChannelTensor {
            values: self.values.iter().zip(&rhs.values).map(|(a, b)| a + b).collect(),
            ..*self
        }
    }
}

impl Sub for &ChannelTensor {
    type Output = ChannelTensor;

    fn sub(self, rhs: &ChannelTensor) -> ChannelTensor {
        assert_eq!(self.values.len(), rhs.values.len(), "grid mismatch");
        ChannelTensor {
            values: self.values.iter().zip(&rhs.values).map(|(a, b)| a - b).collect(),
            ..*self
        }
    }
}
