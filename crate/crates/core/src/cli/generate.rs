//! `generate`: random scenes written as `CSIF` tensors plus `dataset.json`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{create, stream_rng, write_json, ExperimentConfig};
use crate::chanmodel::{
    add_noise, generate_scene, noise_std_for_snr, synth_channel, write_tensor, DatasetManifest,
    ManifestScene, MeasurementGrid, SceneConfig,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub num_scenes: usize,
    /// Number of adjacent bands, starting at `grid`.
    pub bands: usize,
    /// Per-band SNR; `None` writes noiseless tensors.
    pub snr_db: Option<f64>,
    pub grid: MeasurementGrid,
    pub scene: SceneConfig,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            num_scenes: 20,
            bands: 2,
            snr_db: Some(20.0),
            grid: MeasurementGrid::default(),
            scene: SceneConfig::default(),
        }
    }
}

/// Band `b` starts `b·F` subcarriers above the base grid.
pub fn band_grids(base: &MeasurementGrid, bands: usize) -> Vec<MeasurementGrid> {
    (0..bands).map(|b| base.shifted_band(b * base.num_subcarriers)).collect()
}

pub fn run_generate(config: &ExperimentConfig, out: &Path) -> Result<DatasetManifest> {
    let c = &config.generate;
    c.grid.validate()?;
    c.scene.validate()?;
    if c.bands == 0 || c.num_scenes == 0 {
        return Err(Error::invalid("generate needs at least one band and one scene"));
    }
    let grids = band_grids(&c.grid, c.bands);
    let mut manifest = DatasetManifest::new(grids.clone());
    let mut scene_rng = stream_rng(config.seed, 0);
    for id in 0..c.num_scenes {
        let scene = generate_scene(&mut scene_rng, &c.scene)?;
        let mut noise_rng = stream_rng(config.seed, 1 + id as u64);
        let mut files = Vec::with_capacity(grids.len());
        for (b, g) in grids.iter().enumerate() {
            let mut t = synth_channel(g, &scene.paths_on(g), 0.0, &mut noise_rng)?;
            if let Some(snr) = c.snr_db {
                let std = noise_std_for_snr(&t, snr);
                add_noise(&mut t, std, &mut noise_rng);
            }
            t.band_id = b as u32;
            let name = format!("scene_{id:05}_b{b}.csif");
            let mut w = create(out, &name)?;
            write_tensor(&mut w, &t)?;
            w.flush()?;
            files.push(name);
        }
        manifest
            .scenes
            .push(ManifestScene::from_scene(id, &scene, &grids, files, c.snr_db));
    }
    write_json(out, "dataset.json", &manifest)?;
    Ok(manifest)
}
