//! Config-driven experiment runner behind the `xbandloc` binary.
//!
//! One TOML file configures every experiment; each subcommand reads its own
//! section. Every run writes `manifest.json` next to its outputs with the
//! SHA-256 of the resolved config, the seed and the crate version. Nothing
//! time-dependent is written, so identical configs give identical bytes.

mod estimate;
mod generate;
mod localize;
mod reconstruct;

pub use estimate::{run_estimation_benchmark, Algorithm, EstimateConfig, EstimationReport};
pub use generate::{run_generate, GenerateConfig};
pub use localize::{
    run_localization_benchmark, LocalizationBenchmark, LocalizationCondition, LocalizeConfig, QueryFingerprint,
};
pub use reconstruct::{
    desk_grid, run_reconstruction_benchmark, train_crossband_models, training_scene, ReconstructConfig,
    ReconstructionReport, TrainingConfig,
};

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::Cdf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Generate,
    Estimate,
    Reconstruct,
    Localize,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Generate => "generate",
            Self::Estimate => "estimate",
            Self::Reconstruct => "reconstruct",
            Self::Localize => "localize",
        }
    }
}

/// Top-level config file. Unset fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Default subcommand when the binary is given none.
    pub experiment: Option<ExperimentKind>,
    pub seed: u64,
    /// Output directory; `--out` overrides it.
    pub output_dir: Option<PathBuf>,
    pub generate: GenerateConfig,
    pub estimate: EstimateConfig,
    pub reconstruct: ReconstructConfig,
    pub localize: LocalizeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            seed: 0,
            output_dir: None,
            generate: GenerateConfig::default(),
            estimate: EstimateConfig::default(),
            reconstruct: ReconstructConfig::default(),
            localize: LocalizeConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(format!("config: {e}")))
    }

    /// Hex SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> Result<String> {
        let canonical = serde_json::to_vec(self)?;
        let digest = Sha256::digest(&canonical);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Provenance record written with every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub config_sha256: String,
    pub crate_version: String,
    /// Output files relative to the run directory, sorted.
    pub outputs: Vec<String>,
    pub config: ExperimentConfig,
}

/// Generator for independent, order-free random streams.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

pub(crate) fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// `label,value,cdf` rows for each labelled sample set.
pub(crate) fn write_cdf_csv(dir: &Path, name: &str, header: &str, sets: &[(String, &[f64])]) -> Result<()> {
    let mut w = create(dir, name)?;
    writeln!(w, "{header}")?;
    for (label, values) in sets {
        for (x, p) in Cdf::new(values.to_vec())?.points() {
            writeln!(w, "{label},{x},{p}")?;
        }
    }
    w.flush()?;
    Ok(())
}

fn list_outputs(dir: &Path, base: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            list_outputs(&path, base, out)?;
        } else {
            let rel = path.strip_prefix(base).expect("walked from base");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

/// Runs one experiment into `out` and writes its manifest.
pub fn run(kind: ExperimentKind, config: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    fs::create_dir_all(out)?;
    match kind {
        ExperimentKind::Generate => run_generate(config, out).map(|_| ()),
        ExperimentKind::Estimate => run_estimation_benchmark(config, out).map(|_| ()),
        ExperimentKind::Reconstruct => run_reconstruction_benchmark(config, out).map(|_| ()),
        ExperimentKind::Localize => run_localization_benchmark(config, out).map(|_| ()),
    }
    .map_err(|e| match e {
        Error::Stage { .. } => e,
        other => other.in_stage(kind.name()),
    })?;
    let mut outputs = Vec::new();
    list_outputs(out, out, &mut outputs)?;
    outputs.retain(|o| o != "manifest.json");
    outputs.sort();
    let manifest = RunManifest {
        experiment: kind,
        seed: config.seed,
        config_sha256: config.hash()?,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        outputs,
        config: config.clone(),
    };
    write_json(out, "manifest.json", &manifest)?;
    Ok(manifest)
}
