//! `localize`: fingerprint localization with four query types (both bands
//! measured, measured band n spliced with reconstructed band n', and each
//! band alone) over several random environments.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::reconstruct::{desk_grid, train_crossband_models, TrainingConfig};
use super::{create, stream_rng, write_cdf_csv, write_json, ExperimentConfig};
use crate::chanmodel::{
    add_noise, noise_std_for_snr, synth_channel, ChannelTensor, Environment, MeasurementGrid, Scene,
};
use crate::error::{Error, Result, StageExt};
use crate::localization::{
    build_db, evaluate_localization, train_localizer, DbNoise, FingerprintDB, LocalizerConfig,
    LocalizerModel, TestQuery,
};
use crate::music::MusicConfig;
use crate::pipeline::{
    estimate_paths, reconstruct_from_paths, static_channel, strip_mobility, CrossbandModels, ReconstructionConfig,
};
use crate::sage::SageConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalizationCondition {
    /// Both bands measured.
    TrueMultiband,
    /// Measured band n with band n' reconstructed from it.
    Spliced,
    SingleSource,
    SingleTarget,
}

impl LocalizationCondition {
    pub const ALL: [Self; 4] = [Self::TrueMultiband, Self::Spliced, Self::SingleSource, Self::SingleTarget];

    pub fn name(self) -> &'static str {
        match self {
            Self::TrueMultiband => "true_multiband",
            Self::Spliced => "spliced",
            Self::SingleSource => "single_band_n",
            Self::SingleTarget => "single_band_n_prime",
        }
    }
}

/// How a measured query band becomes a static fingerprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryFingerprint {
    /// Rebuilt from the estimated paths with Doppler dropped.
    Parametric,
    /// The measurement with each estimated path's Doppler ramp removed,
    /// residual kept.
    Stripped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeConfig {
    pub grid: MeasurementGrid,
    pub training: TrainingConfig,
    /// Independent environments, seeded `seed, seed + 1, ..`.
    pub environments: usize,
    /// Reference points per row and column.
    pub rp_layout: [usize; 2],
    pub rp_spacing: f64,
    /// Position of the first reference point, meters.
    pub rp_origin: [f64; 2],
    /// Test points are drawn (without replacement) from the reference
    /// points and shifted by `test_offset`.
    pub test_points: usize,
    pub test_offset: [f64; 2],
    pub queries_per_point: usize,
    /// SNR of every query measurement.
    pub snr_db: f64,
    pub query_fingerprint: QueryFingerprint,
    pub database: DbNoise,
    pub speed_kmh: f64,
    pub heading: f64,
    pub scatterers: usize,
    pub scatterer_extent: f64,
    pub reflection_gain_db: f64,
    pub model_order: Option<usize>,
    pub music: MusicConfig,
    pub sage: SageConfig,
    pub localizer: LocalizerConfig,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            grid: desk_grid(),
            training: TrainingConfig::default(),
            environments: 5,
            rp_layout: [4, 4],
            rp_spacing: 1.5,
            rp_origin: [-2.25, 20.0],
            test_points: 8,
            test_offset: [0.0, 0.0],
            queries_per_point: 100,
            snr_db: 0.0,
            query_fingerprint: QueryFingerprint::Parametric,
            database: DbNoise::default(),
            speed_kmh: 60.0,
            heading: -FRAC_PI_2,
            scatterers: 3,
            scatterer_extent: 30.0,
            reflection_gain_db: -6.0,
            model_order: Some(4),
            music: MusicConfig::default(),
            sage: SageConfig::default(),
            localizer: LocalizerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionErrors {
    pub condition: LocalizationCondition,
    pub mean_error_m: f64,
    pub errors_m: Vec<f64>,
    pub estimates: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentResult {
    pub seed: u64,
    pub truth: Vec<[f64; 2]>,
    pub conditions: Vec<ConditionErrors>,
}

impl EnvironmentResult {
    pub fn mean(&self, condition: LocalizationCondition) -> f64 {
        self.conditions
            .iter()
            .find(|c| c.condition == condition)
            .map(|c| c.mean_error_m)
            .expect("every condition is evaluated")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationBenchmark {
    pub environments: Vec<EnvironmentResult>,
}

fn reference_points(c: &LocalizeConfig, env: &Environment) -> Result<Vec<Scene>> {
    let [cols, rows] = c.rp_layout;
    (0..rows)
        .flat_map(|r| (0..cols).map(move |q| (q, r)))
        .map(|(q, r)| {
            let loc = [c.rp_origin[0] + q as f64 * c.rp_spacing, c.rp_origin[1] + r as f64 * c.rp_spacing];
            env.scene_at(loc, c.speed_kmh / 3.6, c.heading)
        })
        .collect()
}

struct Query {
    location: [f64; 2],
    measured: [ChannelTensor; 2],
    reconstructed: ChannelTensor,
}

#[allow(clippy::too_many_arguments)]
fn measure(
    scene: &Scene,
    grids: &[MeasurementGrid; 2],
    c: &LocalizeConfig,
    recon: &ReconstructionConfig,
    models: &CrossbandModels,
    seed: u64,
    stream: u64,
) -> Result<Query> {
    let mut rng = stream_rng(seed, stream);
    let mut stripped = Vec::with_capacity(2);
    let mut source_paths = Vec::new();
    for (b, g) in grids.iter().enumerate() {
        let mut h = synth_channel(g, &scene.paths_on(g), 0.0, &mut rng)?;
        let std = noise_std_for_snr(&h, c.snr_db);
        add_noise(&mut h, std, &mut rng);
        let (paths, _) = estimate_paths(&h, recon)?;
        let mut s = match c.query_fingerprint {
            QueryFingerprint::Parametric => static_channel(g, b as u32, &paths)?,
            QueryFingerprint::Stripped => strip_mobility(&h, &paths)?,
        };
        s.band_id = b as u32;
        stripped.push(s);
        if b == 0 {
            source_paths = paths;
        }
    }
    let mut reconstructed = reconstruct_from_paths(&source_paths, &grids[0], &grids[1], models, true)
        .stage("crossband")?
        .static_prediction;
    reconstructed.band_id = 1;
    let target = stripped.pop().expect("two bands");
    let source = stripped.pop().expect("two bands");
    Ok(Query {
        location: [scene.location[0], scene.location[1]],
        measured: [source, target],
        reconstructed,
    })
}

fn localizer(db: &FingerprintDB, config: &LocalizerConfig) -> Result<LocalizerModel> {
    if db.points.len() == 1 {
        LocalizerModel::constant(db)
    } else {
        train_localizer(db, config)
    }
}

fn run_environment(
    c: &LocalizeConfig,
    models: &CrossbandModels,
    seed: u64,
) -> Result<EnvironmentResult> {
    let source = c.grid;
    let grids = [source, source.adjacent_band()];
    let mut rng = stream_rng(seed, 4 << 32);
    let env = Environment::random(
        &mut rng,
        c.scatterers,
        c.scatterer_extent,
        c.reflection_gain_db,
        source.carrier_frequency,
    );
    let rps = reference_points(c, &env)?;
    let db = build_db(&rps, &grids, &c.database, seed).stage("database")?;
    let both = localizer(&db, &c.localizer)?;
    let only_source = localizer(&db.select_bands(&[0])?, &c.localizer)?;
    let only_target = localizer(&db.select_bands(&[1])?, &c.localizer)?;

    let mut order: Vec<usize> = (0..rps.len()).collect();
    order.shuffle(&mut rng);
    let tests = order[..c.test_points.min(rps.len())]
        .iter()
        .map(|&i| {
            let [x, y] = rps[i].location;
            env.scene_at([x + c.test_offset[0], y + c.test_offset[1]], c.speed_kmh / 3.6, c.heading)
        })
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
    let q = c.queries_per_point;
    let queries = (0..tests.len() * q)
        .into_par_iter()
        .map(|k| measure(&tests[k / q], &grids, c, &recon, models, seed, (5 << 32) + k as u64))
        .collect::<Result<Vec<_>>>()?;

    let build = |cond: LocalizationCondition| -> Vec<TestQuery> {
        queries
            .iter()
            .map(|qr| TestQuery {
                location: qr.location,
                tensors: match cond {
                    LocalizationCondition::TrueMultiband => qr.measured.to_vec(),
                    LocalizationCondition::Spliced => vec![qr.measured[0].clone(), qr.reconstructed.clone()],
                    LocalizationCondition::SingleSource => vec![qr.measured[0].clone()],
                    LocalizationCondition::SingleTarget => vec![qr.measured[1].clone()],
                },
            })
            .collect()
    };
    let mut conditions = Vec::with_capacity(4);
    for cond in LocalizationCondition::ALL {
        let model = match cond {
            LocalizationCondition::TrueMultiband | LocalizationCondition::Spliced => &both,
            LocalizationCondition::SingleSource => &only_source,
            LocalizationCondition::SingleTarget => &only_target,
        };
        let report = evaluate_localization(model, &build(cond)).stage("evaluate")?;
        conditions.push(ConditionErrors {
            condition: cond,
            mean_error_m: report.mean_error,
            errors_m: report.errors,
            estimates: report.estimates,
        });
    }
    Ok(EnvironmentResult {
        seed,
        truth: queries.iter().map(|q| q.location).collect(),
        conditions,
    })
}

/// Writes `localization_errors.csv`, `cdf_locerr.csv` (errors pooled over
/// environments) and `localization_report.json`.
pub fn run_localization_benchmark(config: &ExperimentConfig, out: &Path) -> Result<LocalizationBenchmark> {
    let c = &config.localize;
    c.grid.validate()?;
    c.localizer.validate()?;
    if c.environments == 0 || c.rp_layout[0] * c.rp_layout[1] == 0 || c.test_points == 0 || c.queries_per_point == 0 {
        return Err(Error::invalid("localize needs environments, reference points, test points and queries"));
    }
    let models = train_crossband_models(&c.training, &c.grid, config.seed, false)?;
    let environments = (0..c.environments as u64)
        .map(|k| run_environment(c, &models, config.seed.wrapping_add(k)))
        .collect::<Result<Vec<_>>>()?;
    let bench = LocalizationBenchmark { environments };

    let mut w = create(out, "localization_errors.csv")?;
    writeln!(w, "seed,condition,query,true_x,true_y,est_x,est_y,error_m")?;
    for env in &bench.environments {
        for cond in &env.conditions {
            for (i, ((t, e), err)) in env.truth.iter().zip(&cond.estimates).zip(&cond.errors_m).enumerate() {
                writeln!(w, "{},{},{i},{},{},{},{},{err}", env.seed, cond.condition.name(), t[0], t[1], e[0], e[1])?;
            }
        }
    }
    w.flush()?;
    let pooled: Vec<(String, Vec<f64>)> = LocalizationCondition::ALL
        .iter()
        .map(|&cond| {
            let all = bench
                .environments
                .iter()
                .flat_map(|e| e.conditions.iter().filter(|c| c.condition == cond))
                .flat_map(|c| c.errors_m.iter().copied())
                .collect();
            (cond.name().to_string(), all)
        })
        .collect();
    let sets: Vec<(String, &[f64])> = pooled.iter().map(|(n, v)| (n.clone(), v.as_slice())).collect();
    write_cdf_csv(out, "cdf_locerr.csv", "condition,error_m,cdf", &sets)?;
    let per_env: Vec<serde_json::Value> = bench
        .environments
        .iter()
        .map(|e| {
            let means: serde_json::Map<String, serde_json::Value> = e
                .conditions
                .iter()
                .map(|c| (c.condition.name().to_string(), c.mean_error_m.into()))
                .collect();
            serde_json::json!({ "seed": e.seed, "mean_error_m": means })
        })
        .collect();
    let overall: serde_json::Map<String, serde_json::Value> = pooled
        .iter()
        .map(|(n, v)| (n.clone(), (v.iter().sum::<f64>() / v.len() as f64).into()))
        .collect();
    write_json(
        out,
        "localization_report.json",
        &serde_json::json!({ "environments": per_env, "mean_error_m": overall }),
    )?;
    Ok(bench)
}
