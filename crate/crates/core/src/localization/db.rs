//! Fingerprint database: noisy static multi-band draws per reference point.
//!
//! On disk a database is a directory with `index.json` and one `CSIF`
//! tensor file per (point, sample, band).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chanmodel::{
    add_noise, noise_std_for_snr, read_tensor, synth_static_path, write_tensor, ChannelTensor,
    MeasurementGrid, Scene,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePoint {
    pub location: [f64; 2],
    /// `samples[draw][band]`.
    pub samples: Vec<Vec<ChannelTensor>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintDB {
    pub bands: Vec<u32>,
    pub grids: Vec<MeasurementGrid>,
    pub points: Vec<ReferencePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DbNoise {
    /// Per-band SNR of every stored draw; `None` stores clean tensors.
    pub snr_db: Option<f64>,
    pub samples_per_point: usize,
}

impl Default for DbNoise {
    fn default() -> Self {
        Self {
            snr_db: Some(20.0),
            samples_per_point: 200,
        }
    }
}

impl FingerprintDB {
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::invalid("fingerprint database has no reference points"));
        }
        if self.bands.len() != self.grids.len() || self.bands.is_empty() {
            return Err(Error::dim("one grid per band is required"));
        }
        for (i, rp) in self.points.iter().enumerate() {
            if rp.samples.is_empty() {
                return Err(Error::invalid(format!("reference point {i} has no samples")));
            }
            for s in &rp.samples {
                if s.len() != self.bands.len() {
                    return Err(Error::dim(format!("reference point {i} has a sample with {} bands", s.len())));
                }
                for ((t, b), g) in s.iter().zip(&self.bands).zip(&self.grids) {
                    if t.band_id != *b || t.grid != *g {
                        return Err(Error::dim(format!("reference point {i} disagrees with band {b}")));
                    }
                }
            }
            if self.points[..i].iter().any(|p| p.location == rp.location) {
                return Err(Error::invalid(format!("duplicate location {:?}", rp.location)));
            }
        }
        Ok(())
    }

    pub fn num_records(&self) -> usize {
        self.points.iter().map(|p| p.samples.len()).sum()
    }

    /// Copy restricted to `bands`, in the given order.
    pub fn select_bands(&self, bands: &[u32]) -> Result<Self> {
        let idx = bands
            .iter()
            .map(|b| {
                self.bands
                    .iter()
                    .position(|x| x == b)
                    .ok_or_else(|| Error::invalid(format!("band {b} not in database")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            bands: bands.to_vec(),
            grids: idx.iter().map(|&i| self.grids[i]).collect(),
            points: self
                .points
                .iter()
                .map(|rp| ReferencePoint {
                    location: rp.location,
                    samples: rp
                        .samples
                        .iter()
                        .map(|s| idx.iter().map(|&i| s[i].clone()).collect())
                        .collect(),
                })
                .collect(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir)?;
        let mut points = Vec::with_capacity(self.points.len());
        for (i, rp) in self.points.iter().enumerate() {
            let mut files = Vec::with_capacity(rp.samples.len());
            for (j, s) in rp.samples.iter().enumerate() {
                let mut names = Vec::with_capacity(s.len());
                for t in s {
                    let name = format!("rp{i:03}_s{j:04}_b{}.csif", t.band_id);
                    write_tensor(BufWriter::new(File::create(dir.join(&name))?), t)?;
                    names.push(name);
                }
                files.push(names);
            }
            points.push(IndexPoint {
                location: rp.location,
                files,
            });
        }
        let index = Index {
            bands: self.bands.clone(),
            grids: self.grids.clone(),
            points,
        };
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("index.json"))?), &index)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index: Index = serde_json::from_reader(BufReader::new(File::open(dir.join("index.json"))?))?;
        let points = index
            .points
            .iter()
            .map(|p| {
                let samples = p
                    .files
                    .iter()
                    .map(|names| {
                        names
                            .iter()
                            .map(|n| read_tensor(BufReader::new(File::open(dir.join(n))?)))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ReferencePoint {
                    location: p.location,
                    samples,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let db = Self {
            bands: index.bands,
            grids: index.grids,
            points,
        };
        db.validate()?;
        Ok(db)
    }
}

#[derive(Serialize, Deserialize)]
struct IndexPoint {
    location: [f64; 2],
    files: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct Index {
    bands: Vec<u32>,
    grids: Vec<MeasurementGrid>,
    points: Vec<IndexPoint>,
}

/// Clean static tensor of `scene` on `grid`, tagged with `band`.
pub(crate) fn static_tensor(scene: &Scene, grid: &MeasurementGrid, band: u32) -> Result<ChannelTensor> {
    let mut out = ChannelTensor::zeros(band, *grid);
    for p in scene.static_paths_on(grid) {
        out.accumulate(&synth_static_path(grid, &p))?;
    }
    out.band_id = band;
    Ok(out)
}

/// Synthesizes `samples_per_point` noisy static draws on every grid for each
/// scene. Band ids are the grid positions. Draws for point `i` come from
/// stream `i` of a generator seeded with `seed`, so the result does not
/// depend on thread scheduling.
pub fn build_db(
    scenes: &[Scene],
    grids: &[MeasurementGrid],
    noise: &DbNoise,
    seed: u64,
) -> Result<FingerprintDB> {
    if scenes.is_empty() {
        return Err(Error::invalid("no reference points"));
    }
    if grids.is_empty() {
        return Err(Error::invalid("no bands"));
    }
    if noise.samples_per_point == 0 {
        return Err(Error::invalid("samples_per_point must be positive"));
    }
    for (i, s) in scenes.iter().enumerate() {
        s.validate()?;
        if scenes[..i].iter().any(|p| p.location == s.location) {
            return Err(Error::invalid(format!("duplicate location {:?}", s.location)));
        }
    }
    let points = scenes
        .par_iter()
        .enumerate()
        .map(|(i, scene)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let clean = grids
                .iter()
                .enumerate()
                .map(|(b, g)| static_tensor(scene, g, b as u32))
                .collect::<Result<Vec<_>>>()?;
            let stds: Vec<f64> = clean
                .iter()
                .map(|c| noise.snr_db.map_or(0.0, |snr| noise_std_for_snr(c, snr)))
                .collect();
            let samples = (0..noise.samples_per_point)
                .map(|_| {
                    clean
                        .iter()
                        .zip(&stds)
                        .map(|(c, &std)| {
                            let mut t = c.clone();
                            add_noise(&mut t, std, &mut rng);
                            t
                        })
                        .collect()
                })
                .collect();
            Ok(ReferencePoint {
                location: scene.location,
                samples,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FingerprintDB {
        bands: (0..grids.len() as u32).collect(),
        grids: grids.to_vec(),
        points,
    })
}
