//! `reconstruct`: trains the cross-band mappers at one speed and scores
//! band-n' reconstruction at several test speeds, with and without
//! mobility removal.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{create, stream_rng, write_cdf_csv, write_json, ExperimentConfig};
use crate::chanmodel::{
    add_noise, generate_scene, noise_std_for_snr, synth_channel, MeasurementGrid, SceneConfig,
};
use crate::error::{Error, Result, StageExt};
use crate::metrics::ccne;
use crate::music::MusicConfig;
use crate::neural::{train_fnn_mobility, train_vae_crossband, FnnConfig, TrainConfig, VaeConfig};
use crate::pipeline::{
    estimate_paths, path_training_pairs, reconstruct_from_paths, CrossbandModels, ReconstructionConfig,
};
use crate::sage::SageConfig;

const KMH: f64 = 1.0 / 3.6;

/// Grid used by the reconstruction and localization experiments: 8 packets,
/// 16 subcarriers at 960 kHz (15.36 MHz per band), 3 antennas.
pub fn desk_grid() -> MeasurementGrid {
    MeasurementGrid {
        num_packets: 8,
        num_subcarriers: 16,
        num_antennas: 3,
        subcarrier_spacing: 960e3,
        ..MeasurementGrid::default()
    }
}

/// Scenes seen by the mappers: 60 km/h along a fixed heading.
pub fn training_scene() -> SceneConfig {
    SceneConfig {
        speed: [60.0 * KMH, 60.0 * KMH],
        heading: Some(-FRAC_PI_2),
        ..SceneConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub scenes: usize,
    pub scene: SceneConfig,
    pub mobility: FnnConfig,
    pub static_paths: VaeConfig,
    pub dynamic_paths: VaeConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let train = TrainConfig {
            epochs: 60,
            ..TrainConfig::default()
        };
        Self {
            scenes: 3000,
            scene: training_scene(),
            mobility: FnnConfig {
                train: train.clone(),
                ..FnnConfig::default()
            },
            static_paths: VaeConfig {
                train: TrainConfig {
                    learning_rate: 3e-3,
                    kl_weight: 1e-5,
                    ..train.clone()
                },
                ..VaeConfig::default()
            },
            dynamic_paths: VaeConfig {
                train: TrainConfig {
                    learning_rate: 1e-3,
                    kl_weight: 1e-5,
                    ..train
                },
                ..VaeConfig::default()
            },
        }
    }
}

/// Trains the Doppler mapper and static-path VAE (plus the dynamic-path VAE
/// when `with_dynamic`) on per-path pairs from random scenes.
pub fn train_crossband_models(
    training: &TrainingConfig,
    source: &MeasurementGrid,
    seed: u64,
    with_dynamic: bool,
) -> Result<CrossbandModels> {
    training.scene.validate()?;
    if training.scenes == 0 {
        return Err(Error::invalid("training needs at least one scene"));
    }
    let target = source.adjacent_band();
    let mut rng = stream_rng(seed, 1 << 32);
    let (mut statics, mut ramps, mut dynamics) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..training.scenes {
        let scene = generate_scene(&mut rng, &training.scene)?;
        for (p, q) in scene.paths_on(source).iter().zip(scene.paths_on(&target)) {
            let pairs = path_training_pairs(p, &q, source, &target)?;
            statics.push(pairs.static_pair);
            ramps.push(pairs.ramp_pair);
            if with_dynamic {
                dynamics.push(pairs.dynamic_pair);
            }
        }
    }
    let seeded = |mut t: TrainConfig, k: u64| {
        t.seed = t.seed.wrapping_add(seed).wrapping_add(k);
        t
    };
    let mobility = train_fnn_mobility(
        &ramps,
        &FnnConfig {
            train: seeded(training.mobility.train.clone(), 0),
            ..training.mobility.clone()
        },
    )
    .stage("train mobility mapper")?;
    let static_paths = train_vae_crossband(
        &statics,
        &VaeConfig {
            train: seeded(training.static_paths.train.clone(), 1),
            ..training.static_paths.clone()
        },
    )
    .stage("train static mapper")?;
    let dynamic_paths = if with_dynamic {
        Some(
            train_vae_crossband(
                &dynamics,
                &VaeConfig {
                    train: seeded(training.dynamic_paths.train.clone(), 2),
                    ..training.dynamic_paths.clone()
                },
            )
            .stage("train dynamic mapper")?,
        )
    } else {
        None
    };
    Ok(CrossbandModels {
        mobility,
        static_paths,
        dynamic_paths,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityCondition {
    pub name: String,
    /// Test speeds are drawn uniformly from this range, km/h.
    pub speed_kmh: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    pub grid: MeasurementGrid,
    pub training: TrainingConfig,
    pub test_scenes: usize,
    pub snr_db: f64,
    pub model_order: Option<usize>,
    pub music: MusicConfig,
    pub sage: SageConfig,
    /// The first condition is the one matching the training speed.
    pub conditions: Vec<VelocityCondition>,
    pub save_models: bool,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        let cond = |name: &str, lo: f64, hi: f64| VelocityCondition {
            name: name.into(),
            speed_kmh: [lo, hi],
        };
        Self {
            grid: desk_grid(),
            training: TrainingConfig::default(),
            test_scenes: 200,
            snr_db: 20.0,
            model_order: Some(4),
            music: MusicConfig::default(),
            sage: SageConfig::default(),
            conditions: vec![cond("matched", 60.0, 60.0), cond("low", 5.0, 5.0), cond("mixed", 50.0, 70.0)],
            save_models: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub condition: String,
    pub mobility_removal: bool,
    pub mean_ccne_db: f64,
    pub ccne_db: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub results: Vec<ConditionResult>,
}

impl ReconstructionReport {
    pub fn mean(&self, condition: &str, mobility_removal: bool) -> Option<f64> {
        self.results
            .iter()
            .find(|r| r.condition == condition && r.mobility_removal == mobility_removal)
            .map(|r| r.mean_ccne_db)
    }

    /// Max minus min of the per-condition means.
    pub fn spread(&self, mobility_removal: bool) -> f64 {
        let means = self
            .results
            .iter()
            .filter(|r| r.mobility_removal == mobility_removal)
            .map(|r| r.mean_ccne_db);
        let (lo, hi) = means.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| (lo.min(m), hi.max(m)));
        hi - lo
    }
}

/// Writes `reconstruction_report.json`, `reconstruction_ccne.csv`,
/// `cdf_ccne.csv` and (optionally) the trained models under `models/`.
pub fn run_reconstruction_benchmark(config: &ExperimentConfig, out: &Path) -> Result<ReconstructionReport> {
    let c = &config.reconstruct;
    c.grid.validate()?;
    c.sage.validate()?;
    if c.test_scenes == 0 || c.conditions.is_empty() {
        return Err(Error::invalid("reconstruct needs test scenes and conditions"));
    }
    let source = c.grid;
    let target = source.adjacent_band();
    let models = train_crossband_models(&c.training, &source, config.seed, true)?;
    if c.save_models {
        let dir = out.join("models");
        std::fs::create_dir_all(&dir)?;
        models.mobility.save(&dir, "mobility")?;
        models.static_paths.save(&dir, "static_paths")?;
        if let Some(d) = &models.dynamic_paths {
            d.save(&dir, "dynamic_paths")?;
        }
    }
    let mut scene_rng = stream_rng(config.seed, 2 << 32);
    let scenes = (0..c.test_scenes)
        .map(|_| generate_scene(&mut scene_rng, &c.training.scene))
        .collect::<Result<Vec<_>>>()?;
    let recon = ReconstructionConfig {
        music: MusicConfig {
            model_order_override: c.model_order,
            ..c.music.clone()
        },
        sage: c.sage.clone(),
        mobility_removal: true,
        expected_paths: c.model_order,
    };
    let n = scenes.len();
    let mut results = Vec::new();
    for (k, cond) in c.conditions.iter().enumerate() {
        let [lo, hi] = cond.speed_kmh;
        if !(lo >= 0.0 && lo <= hi) {
            return Err(Error::invalid(format!("condition {} has speed range {lo}..{hi}", cond.name)));
        }
        let pairs = scenes
            .par_iter()
            .enumerate()
            .map(|(i, base)| {
                let mut rng = stream_rng(config.seed, (3 << 32) + (k * n + i) as u64);
                let speed = if lo == hi { lo } else { rng.random_range(lo..=hi) } * KMH;
                let scene = base.with_speed(speed);
                let clean = synth_channel(&source, &scene.paths_on(&source), 0.0, &mut rng)?;
                let mut noisy = clean.clone();
                add_noise(&mut noisy, noise_std_for_snr(&clean, c.snr_db), &mut rng);
                let truth = synth_channel(&target, &scene.paths_on(&target), 0.0, &mut rng)?;
                let (paths, _) = estimate_paths(&noisy, &recon)?;
                let score = |removal: bool| -> Result<f64> {
                    let r = reconstruct_from_paths(&paths, &source, &target, &models, removal)
                        .stage("crossband")?;
                    ccne(r.dynamic_prediction.values(), truth.values())
                };
                Ok((score(true)?, score(false)?))
            })
            .collect::<Result<Vec<_>>>()?;
        for removal in [true, false] {
            let ccne_db: Vec<f64> = pairs.iter().map(|p| if removal { p.0 } else { p.1 }).collect();
            results.push(ConditionResult {
                condition: cond.name.clone(),
                mobility_removal: removal,
                mean_ccne_db: ccne_db.iter().sum::<f64>() / n as f64,
                ccne_db,
            });
        }
    }
    let report = ReconstructionReport { results };

    let label = |r: &ConditionResult| {
        format!("{}_{}", r.condition, if r.mobility_removal { "removal" } else { "no_removal" })
    };
    let mut w = create(out, "reconstruction_ccne.csv")?;
    writeln!(w, "condition,mobility_removal,sample,ccne_db")?;
    for r in &report.results {
        for (i, v) in r.ccne_db.iter().enumerate() {
            writeln!(w, "{},{},{i},{v}", r.condition, r.mobility_removal)?;
        }
    }
    w.flush()?;
    let sets: Vec<(String, &[f64])> = report.results.iter().map(|r| (label(r), r.ccne_db.as_slice())).collect();
    write_cdf_csv(out, "cdf_ccne.csv", "series,ccne_db,cdf", &sets)?;
    let summary: Vec<serde_json::Value> = report
        .results
        .iter()
        .map(|r| {
            serde_json::json!({
                "condition": r.condition,
                "mobility_removal": r.mobility_removal,
                "mean_ccne_db": r.mean_ccne_db,
            })
        })
        .collect();
    write_json(
        out,
        "reconstruction_report.json",
        &serde_json::json!({
            "results": summary,
            "spread_with_removal_db": report.spread(true),
            "spread_without_removal_db": report.spread(false),
        }),
    )?;
    Ok(report)
}
