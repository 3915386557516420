//! `CSIF` tensor container and the JSON dataset manifest.
//!
//! Layout (little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "CSIF"
//!      4     4  version (u32, = 1)
//!      8     4  band_id (u32)
//!     12     4  T (u32)
//!     16     4  F (u32)
//!     20     4  S (u32)
//!     24     8  carrier_frequency (f64, Hz)
//!     32     8  packet_interval (f64, s)
//!     40     8  subcarrier_spacing (f64, Hz)
//!     48     8  antenna_spacing (f64, wavelengths)
//!     56  16·M  values as (re f64, im f64), antenna fastest then subcarrier then packet
//! ```

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{ChannelTensor, MeasurementGrid, PathParams, Scene};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CSIF";
const VERSION: u32 = 1;

pub fn write_tensor<W: Write>(mut w: W, tensor: &ChannelTensor) -> Result<()> {
    let g = &tensor.grid;
    let mut buf = Vec::with_capacity(56 + 16 * g.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&tensor.band_id.to_le_bytes());
    for dim in [g.num_packets, g.num_subcarriers, g.num_antennas] {
        let dim = u32::try_from(dim).map_err(|_| Error::invalid("grid dimension exceeds u32"))?;
        buf.extend_from_slice(&dim.to_le_bytes());
    }
    for v in [
        g.carrier_frequency,
        g.packet_interval,
        g.subcarrier_spacing,
        g.antenna_spacing,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in tensor.values() {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn take<const N: usize>(bytes: &[u8], pos: &mut usize) -> Result<[u8; N]> {
    let end = *pos + N;
    let slice = bytes
        .get(*pos..end)
        .ok_or_else(|| Error::Format("truncated tensor file".into()))?;
    *pos = end;
    Ok(slice.try_into().expect("slice length checked"))
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<ChannelTensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0;
    if &take::<4>(&bytes, &mut pos)? != MAGIC {
        return Err(Error::Format("bad magic, expected CSIF".into()));
    }
    let u32_at = |pos: &mut usize| take::<4>(&bytes, pos).map(u32::from_le_bytes);
    let version = u32_at(&mut pos)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let band_id = u32_at(&mut pos)?;
    let t = u32_at(&mut pos)? as usize;
    let f = u32_at(&mut pos)? as usize;
    let s = u32_at(&mut pos)? as usize;
    let f64_at = |pos: &mut usize| take::<8>(&bytes, pos).map(f64::from_le_bytes);
    let fc = f64_at(&mut pos)?;
    let dt = f64_at(&mut pos)?;
    let df = f64_at(&mut pos)?;
    let ds = f64_at(&mut pos)?;
    let grid = MeasurementGrid::new(t, f, s, dt, df, ds, fc)?;
    let expected = pos + 16 * grid.len();
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "payload is {} bytes, header implies {}",
            bytes.len() - pos,
            expected - pos
        )));
    }
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        let re = f64_at(&mut pos)?;
        let im = f64_at(&mut pos)?;
        values.push(Complex64::new(re, im));
    }
    ChannelTensor::new(band_id, grid, values)
}

/// Ground-truth path as stored in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestPath {
    pub alpha_re: f64,
    pub alpha_im: f64,
    pub tau: f64,
    pub phi: f64,
    pub doppler: f64,
}

impl From<&PathParams> for ManifestPath {
    fn from(p: &PathParams) -> Self {
        Self {
            alpha_re: p.alpha.re,
            alpha_im: p.alpha.im,
            tau: p.tau,
            phi: p.phi,
            doppler: p.doppler,
        }
    }
}

impl From<&ManifestPath> for PathParams {
    fn from(p: &ManifestPath) -> Self {
        PathParams::new(Complex64::new(p.alpha_re, p.alpha_im), p.tau, p.phi, p.doppler)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestScene {
    pub id: usize,
    pub location: [f64; 2],
    pub speed: f64,
    pub heading: f64,
    /// Tensor file names relative to the manifest, one per band.
    pub files: Vec<String>,
    /// Ground-truth paths per band, in the same order as `files`.
    pub paths: Vec<Vec<ManifestPath>>,
    pub snr_db: Option<f64>,
}

impl ManifestScene {
    pub fn from_scene(
        id: usize,
        scene: &Scene,
        grids: &[MeasurementGrid],
        files: Vec<String>,
        snr_db: Option<f64>,
    ) -> Self {
        Self {
            id,
            location: scene.location,
            speed: scene.speed,
            heading: scene.heading,
            files,
            paths: grids
                .iter()
                .map(|g| scene.paths_on(g).iter().map(ManifestPath::from).collect())
                .collect(),
            snr_db,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub grids: Vec<MeasurementGrid>,
    pub scenes: Vec<ManifestScene>,
}

impl DatasetManifest {
    pub fn new(grids: Vec<MeasurementGrid>) -> Self {
        Self {
            format: "CSIF/1".into(),
            grids,
            scenes: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chanmodel::synth_path;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn tensor_round_trips(re in -1e3f64..1e3, im in -1e3f64..1e3, tau in 0.0f64..8e-6,
                              phi in -1.0f64..1.0, fd in -5e3f64..5e3, band in 0u32..4) {
            let g = MeasurementGrid::new(3, 5, 2, 50e-6, 120e3, 0.5, 60e9).unwrap();
            let mut t = synth_path(&g, &PathParams::new(Complex64::new(re, im), tau, phi, fd));
            t.band_id = band;
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            prop_assert_eq!(buf.len(), 56 + 16 * g.len());
            let back = read_tensor(&buf[..]).unwrap();
            prop_assert_eq!(back, t);
        }
    }

    #[test]
    fn header_layout_is_fixed() {
        let g = MeasurementGrid::new(1, 1, 1, 0.5, 2.0, 0.25, 8.0).unwrap();
        let t = ChannelTensor::new(7, g, vec![Complex64::new(1.5, -2.0)]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[0..4], b"CSIF");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 7);
        assert_eq!(f64::from_le_bytes(buf[24..32].try_into().unwrap()), 8.0);
        assert_eq!(f64::from_le_bytes(buf[48..56].try_into().unwrap()), 0.25);
        assert_eq!(f64::from_le_bytes(buf[56..64].try_into().unwrap()), 1.5);
        assert_eq!(f64::from_le_bytes(buf[64..72].try_into().unwrap()), -2.0);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        assert!(read_tensor(&b"NOPE"[..]).is_err());
        let g = MeasurementGrid::new(1, 2, 1, 0.5, 2.0, 0.25, 8.0).unwrap();
        let t = ChannelTensor::zeros(0, g);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf.pop();
        assert!(matches!(read_tensor(&buf[..]), Err(Error::Format(_))));
    }
}
