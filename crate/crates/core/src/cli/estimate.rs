//! `estimate`: MUSIC-only, MUSIC+SAGE, MUSIC+PSO and MUSIC+CMA-ES on a shared
//! set of noisy mobile measurements, scored by CCNE of the rebuilt channel
//! against the noiseless one.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{create, stream_rng, write_json, ExperimentConfig};
use crate::baselines::{baseline_refine, BaselineConfig, Optimizer};
use crate::chanmodel::{add_noise, generate_scene, noise_std_for_snr, synth_channel, MeasurementGrid, SceneConfig};
use crate::error::{Error, Result, StageExt};
use crate::metrics::ccne;
use crate::music::{coarse_estimate, MusicConfig};
use crate::sage::{initial_paths, reconstruct, sage_refine, SageConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Music,
    Sage,
    Pso,
    Cmaes,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Music => "music",
            Self::Sage => "sage",
            Self::Pso => "pso",
            Self::Cmaes => "cmaes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub measurements: usize,
    /// `None` scores noiseless measurements.
    pub snr_db: Option<f64>,
    pub algorithms: Vec<Algorithm>,
    /// MUSIC model order; `None` uses the eigenvalue-gap detector.
    pub model_order: Option<usize>,
    pub grid: MeasurementGrid,
    pub scene: SceneConfig,
    pub music: MusicConfig,
    pub sage: SageConfig,
    pub baselines: BaselineConfig,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            measurements: 200,
            snr_db: Some(20.0),
            algorithms: vec![Algorithm::Music, Algorithm::Sage, Algorithm::Pso, Algorithm::Cmaes],
            model_order: Some(4),
            grid: MeasurementGrid::default(),
            scene: SceneConfig::default(),
            music: MusicConfig::default(),
            sage: SageConfig::default(),
            baselines: BaselineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub mean_ccne_db: f64,
    pub median_ccne_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub measurements: usize,
    pub summary: Vec<AlgorithmSummary>,
    /// `ccne_db[i][k]` for measurement `i` and the `k`-th configured algorithm.
    pub ccne_db: Vec<Vec<f64>>,
}

impl EstimationReport {
    pub fn mean(&self, algorithm: Algorithm) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.algorithm == algorithm)
            .map(|s| s.mean_ccne_db)
    }
}

fn score_one(config: &ExperimentConfig, index: usize) -> Result<Vec<f64>> {
    let c = &config.estimate;
    let mut rng = stream_rng(config.seed, index as u64);
    let scene = generate_scene(&mut rng, &c.scene)?;
    let clean = synth_channel(&c.grid, &scene.paths_on(&c.grid), 0.0, &mut rng)?;
    let mut noisy = clean.clone();
    if let Some(snr) = c.snr_db {
        add_noise(&mut noisy, noise_std_for_snr(&clean, snr), &mut rng);
    }
    let music = MusicConfig {
        model_order_override: c.model_order,
        ..c.music.clone()
    };
    let coarse = coarse_estimate(&noisy, &music).stage("music")?;
    let mut baselines = c.baselines.clone();
    baselines.pso.seed = baselines.pso.seed.wrapping_add(index as u64);
    baselines.cmaes.seed = baselines.cmaes.seed.wrapping_add(index as u64);
    c.algorithms
        .iter()
        .map(|a| {
            let paths = match a {
                Algorithm::Music => initial_paths(&coarse),
                Algorithm::Sage => sage_refine(&noisy, &coarse, &c.sage).stage("sage")?.paths,
                Algorithm::Pso => baseline_refine(&noisy, &coarse, Optimizer::Pso, &baselines)
                    .stage("pso")?
                    .paths,
                Algorithm::Cmaes => baseline_refine(&noisy, &coarse, Optimizer::Cmaes, &baselines)
                    .stage("cmaes")?
                    .paths,
            };
            ccne(reconstruct(&c.grid, &paths).values(), clean.values())
        })
        .collect()
}

/// Scores every configured algorithm on `measurements` random scenes and
/// writes `estimation_report.json` and `estimation_ccne.csv`.
pub fn run_estimation_benchmark(config: &ExperimentConfig, out: &Path) -> Result<EstimationReport> {
    let c = &config.estimate;
    c.grid.validate()?;
    c.scene.validate()?;
    c.sage.validate()?;
    if c.measurements == 0 || c.algorithms.is_empty() {
        return Err(Error::invalid("estimate needs measurements and at least one algorithm"));
    }
    let ccne_db = (0..c.measurements)
        .into_par_iter()
        .map(|i| score_one(config, i))
        .collect::<Result<Vec<_>>>()?;
    let summary = c
        .algorithms
        .iter()
        .enumerate()
        .map(|(k, &algorithm)| {
            let mut col: Vec<f64> = ccne_db.iter().map(|r| r[k]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            col.sort_by(f64::total_cmp);
            let n = col.len();
            let median = if n % 2 == 1 { col[n / 2] } else { 0.5 * (col[n / 2 - 1] + col[n / 2]) };
            AlgorithmSummary {
                algorithm,
                mean_ccne_db: mean,
                median_ccne_db: median,
            }
        })
        .collect();
    let report = EstimationReport {
        measurements: c.measurements,
        summary,
        ccne_db,
    };
    write_json(out, "estimation_report.json", &report.summary)?;
    let mut w = create(out, "estimation_ccne.csv")?;
    let names: Vec<&str> = c.algorithms.iter().map(|a| a.name()).collect();
    writeln!(w, "measurement,{}", names.join(","))?;
    for (i, row) in report.ccne_db.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{i},{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(report)
}
