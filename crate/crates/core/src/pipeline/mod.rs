//! End-to-end cross-band reconstruction: estimate paths on band n, strip
//! their Doppler, map each static path and its Doppler to band n', put the
//! Doppler back and sum.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::chanmodel::{synth_path, synth_static_path, ChannelTensor, MeasurementGrid, PathParams, StaticPathParams};
use crate::error::{Error, Result, StageExt};
use crate::metrics::ccne;
use crate::music::{coarse_estimate, MusicConfig};
use crate::neural::features::{
    doppler_from_ramp, doppler_ramp, dynamic_path_vector, dynamic_vector_to_tensor, static_path_vector,
    static_vector_to_tensor,
};
use crate::neural::{TrainedFnn, TrainedVae};
use crate::sage::{sage_refine, SageConfig};

/// Multiplies packet `t` by `exp(sign·j2π·f_D·t·Δt)`.
fn modulate(tensor: &ChannelTensor, doppler: f64, sign: f64) -> ChannelTensor {
    let g = tensor.grid;
    let per_packet = g.num_subcarriers * g.num_antennas;
    let mut out = tensor.clone();
    for (t, chunk) in out.values_mut().chunks_mut(per_packet).enumerate() {
        let w = Complex64::from_polar(1.0, sign * 2.0 * PI * doppler * t as f64 * g.packet_interval);
        for v in chunk {
            *v *= w;
        }
    }
    out
}

/// Static parameters of `theta` and the response of the static path.
pub fn remove_mobility(theta: &PathParams, grid: &MeasurementGrid) -> (StaticPathParams, ChannelTensor) {
    let s = theta.to_static();
    let tensor = synth_static_path(grid, &s);
    (s, tensor)
}

/// Strips the Doppler ramp of a measured path tensor.
pub fn remove_mobility_tensor(dynamic: &ChannelTensor, doppler: f64) -> ChannelTensor {
    modulate(dynamic, doppler, -1.0)
}

/// Re-applies the Doppler ramp `exp(+j2π f_D tΔt)` to a static path tensor.
pub fn apply_mobility(static_path: &ChannelTensor, doppler: f64) -> Result<ChannelTensor> {
    if !doppler.is_finite() {
        return Err(Error::NonFinite(format!("doppler {doppler}")));
    }
    Ok(modulate(static_path, doppler, 1.0))
}

/// The trained mappers for one `(n, n')` band pair.
#[derive(Debug, Clone)]
pub struct CrossbandModels {
    /// Doppler ramp on n → Doppler ramp on n'.
    pub mobility: TrainedFnn,
    /// Static path vector on n → static path vector on n'.
    pub static_paths: TrainedVae,
    /// Dynamic path vector on n → dynamic path vector on n'; used when
    /// mobility removal is disabled.
    pub dynamic_paths: Option<TrainedVae>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructionConfig {
    pub music: MusicConfig,
    pub sage: SageConfig,
    /// Strip Doppler before the cross-band mapping. When off, whole dynamic
    /// path responses go through the dynamic-path mapper.
    pub mobility_removal: bool,
    /// Path count the mappers were trained for; estimates are trimmed or
    /// zero-filled to it.
    pub expected_paths: Option<usize>,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            music: MusicConfig::default(),
            sage: SageConfig::default(),
            mobility_removal: true,
            expected_paths: None,
        }
    }
}

/// How the estimated path list was reconciled with the expected count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PathCountAdjustment {
    pub dropped: usize,
    pub zero_filled: usize,
}

/// Orders paths by delay (ties by descending `|alpha|`) and trims the
/// weakest or pads with zero-gain paths to reach `expected`.
pub fn align_paths(paths: &[PathParams], expected: Option<usize>) -> (Vec<PathParams>, PathCountAdjustment) {
    let mut kept = paths.to_vec();
    let mut adj = PathCountAdjustment::default();
    if let Some(n) = expected {
        if kept.len() > n {
            kept.sort_by(|a, b| b.alpha.norm().total_cmp(&a.alpha.norm()));
            adj.dropped = kept.len() - n;
            kept.truncate(n);
        }
        while kept.len() < n {
            kept.push(PathParams::new(Complex64::new(0.0, 0.0), 0.0, 0.0, 0.0));
            adj.zero_filled += 1;
        }
    }
    kept.sort_by(|a, b| {
        a.tau
            .total_cmp(&b.tau)
            .then_with(|| b.alpha.norm().total_cmp(&a.alpha.norm()))
    });
    (kept, adj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    /// Σ predicted static paths on band n'.
    pub static_prediction: ChannelTensor,
    /// Σ predicted dynamic paths on band n'.
    pub dynamic_prediction: ChannelTensor,
    pub per_path_static: Vec<ChannelTensor>,
    /// Predicted band-n' Doppler per path (zero when mobility removal is off).
    pub predicted_dopplers: Vec<f64>,
    /// Band-n paths that fed the mappers, in matched order.
    pub source_paths: Vec<PathParams>,
    pub adjustment: PathCountAdjustment,
    /// CCNE of the dynamic prediction, when ground truth was supplied.
    pub ccne: Option<f64>,
}

fn stack(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let dim = rows.first().map_or(0, |r| r.len());
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), dim), flat).map_err(|e| Error::dim(e.to_string()))
}

/// Cross-band mapping from known band-n paths (bypasses estimation).
pub fn reconstruct_from_paths(
    paths: &[PathParams],
    source: &MeasurementGrid,
    target: &MeasurementGrid,
    models: &CrossbandModels,
    mobility_removal: bool,
) -> Result<ReconstructionResult> {
    if paths.is_empty() {
        return Err(Error::invalid("no paths to map"));
    }
    let band = 1;
    let mut static_sum = ChannelTensor::zeros(band, *target);
    let mut dynamic_sum = ChannelTensor::zeros(band, *target);
    let mut per_path_static = Vec::with_capacity(paths.len());
    let mut predicted_dopplers = Vec::with_capacity(paths.len());

    if mobility_removal {
        let statics: Vec<Vec<f64>> = paths
            .iter()
            .map(|p| static_path_vector(&remove_mobility(p, source).0, source))
            .collect();
        let ramps: Vec<Vec<f64>> = paths.iter().map(|p| doppler_ramp(p.doppler, source)).collect();
        let static_out = models.static_paths.predict_batch(&stack(&statics)?).stage("static mapper")?;
        let ramp_out = models.mobility.predict_batch(&stack(&ramps)?).stage("mobility mapper")?;
        for (i, p) in paths.iter().enumerate() {
            let row = static_out.row(i).to_vec();
            let s = static_vector_to_tensor(&row, p.alpha, target, band)?;
            let fd = doppler_from_ramp(&ramp_out.row(i).to_vec(), target)?;
            let d = apply_mobility(&s, fd)?;
            static_sum.accumulate(&s)?;
            dynamic_sum.accumulate(&d)?;
            per_path_static.push(s);
            predicted_dopplers.push(fd);
        }
    } else {
        let model = models
            .dynamic_paths
            .as_ref()
            .ok_or_else(|| Error::invalid("mobility removal disabled but no dynamic-path mapper"))?;
        let inputs: Vec<Vec<f64>> = paths.iter().map(|p| dynamic_path_vector(p, source)).collect();
        let out = model.predict_batch(&stack(&inputs)?).stage("dynamic mapper")?;
        for (i, p) in paths.iter().enumerate() {
            let d = dynamic_vector_to_tensor(&out.row(i).to_vec(), p.alpha, target, band)?;
            dynamic_sum.accumulate(&d)?;
            // Without a Doppler estimate the static part is the first packet held.
            let first = d.packet(0);
            let values = (0..target.num_packets).flat_map(|_| first.iter().copied()).collect();
            let s = ChannelTensor::new(band, *target, values)?;
            static_sum.accumulate(&s)?;
            per_path_static.push(s);
            predicted_dopplers.push(0.0);
        }
    }
    Ok(ReconstructionResult {
        static_prediction: static_sum,
        dynamic_prediction: dynamic_sum,
        per_path_static,
        predicted_dopplers,
        source_paths: paths.to_vec(),
        adjustment: PathCountAdjustment::default(),
        ccne: None,
    })
}

/// MUSIC then SAGE on a band-n tensor, with paths aligned to
/// `config.expected_paths`.
pub fn estimate_paths(
    tensor: &ChannelTensor,
    config: &ReconstructionConfig,
) -> Result<(Vec<PathParams>, PathCountAdjustment)> {
    let coarse = coarse_estimate(tensor, &config.music).stage("music")?;
    let refined = sage_refine(tensor, &coarse, &config.sage).stage("sage")?;
    Ok(align_paths(&refined.paths, config.expected_paths))
}

/// Replaces each estimated path's time-varying contribution in a measured
/// tensor with its static version. The estimation residual (noise and
/// model error) is kept, so the output still looks like a measurement.
pub fn strip_mobility(tensor: &ChannelTensor, paths: &[PathParams]) -> Result<ChannelTensor> {
    let mut out = tensor.clone();
    for p in paths {
        if !p.is_finite() {
            return Err(Error::NonFinite(format!("path {p:?}")));
        }
        let dynamic = synth_path(&tensor.grid, p);
        let still = synth_static_path(&tensor.grid, &p.to_static());
        for ((o, d), s) in out.values_mut().iter_mut().zip(dynamic.values()).zip(still.values()) {
            *o += s - d;
        }
    }
    Ok(out)
}

/// Static channel rebuilt from estimated paths with their Doppler dropped.
/// Unlike [`strip_mobility`] this discards the estimation residual.
pub fn static_channel(grid: &MeasurementGrid, band_id: u32, paths: &[PathParams]) -> Result<ChannelTensor> {
    let mut out = ChannelTensor::zeros(band_id, *grid);
    for p in paths {
        if !p.is_finite() {
            return Err(Error::NonFinite(format!("path {p:?}")));
        }
        out.accumulate(&synth_static_path(grid, &p.to_static()))?;
    }
    Ok(out)
}

/// Full pipeline: MUSIC and SAGE on the band-n tensor, then the cross-band
/// mapping. `truth` (the band-n' channel) fills in the CCNE.
pub fn reconstruct_crossband(
    tensor: &ChannelTensor,
    target: &MeasurementGrid,
    models: &CrossbandModels,
    config: &ReconstructionConfig,
    truth: Option<&ChannelTensor>,
) -> Result<ReconstructionResult> {
    let (paths, adjustment) = estimate_paths(tensor, config)?;
    let mut result =
        reconstruct_from_paths(&paths, &tensor.grid, target, models, config.mobility_removal)
            .stage("crossband")?;
    result.adjustment = adjustment;
    if let Some(t) = truth {
        result.ccne = Some(ccne(result.dynamic_prediction.values(), t.values())?);
    }
    Ok(result)
}

/// Training pairs for one path observed on both bands.
#[derive(Debug, Clone, PartialEq)]
pub struct PathPairs {
    pub static_pair: (Vec<f64>, Vec<f64>),
    pub ramp_pair: (Vec<f64>, Vec<f64>),
    pub dynamic_pair: (Vec<f64>, Vec<f64>),
}

/// Network inputs from the band-n path and targets from the same path on
/// band n'. Targets are normalized by the band-n gain, matching how
/// predictions are rescaled at inference.
pub fn path_training_pairs(
    source_path: &PathParams,
    target_path: &PathParams,
    source: &MeasurementGrid,
    target: &MeasurementGrid,
) -> Result<PathPairs> {
    if source_path.alpha.norm() == 0.0 {
        return Err(Error::invalid("source path has zero gain"));
    }
    let rel = target_path.alpha / source_path.alpha;
    let rotate = |v: Vec<f64>| -> Vec<f64> {
        v.chunks_exact(2)
            .flat_map(|c| {
                let z = Complex64::new(c[0], c[1]) * rel;
                [z.re, z.im]
            })
            .collect()
    };
    Ok(PathPairs {
        static_pair: (
            static_path_vector(&source_path.to_static(), source),
            rotate(static_path_vector(&target_path.to_static(), target)),
        ),
        ramp_pair: (
            doppler_ramp(source_path.doppler, source),
            doppler_ramp(target_path.doppler, target),
        ),
        dynamic_pair: (
            dynamic_path_vector(source_path, source),
            rotate(dynamic_path_vector(target_path, target)),
        ),
    })
}

/// Errors compared by the linearity check between full-channel and
/// per-path reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    /// `‖H − Ĥ‖₂ / M` with both channels re-modulated by the exact Doppler.
    pub full_channel_error: f64,
    /// `Σ_l ‖P̄_l − P̃_l‖₂ / (M·L)` over static paths.
    pub per_path_error: f64,
    /// `full_channel_error / per_path_error` (NaN when both are zero).
    pub ratio: f64,
    pub num_paths: usize,
}

/// Compares full-channel error after re-applying the exact per-path Doppler
/// with the mean per-path static error.
pub fn lemma1_check(
    truth_static: &[ChannelTensor],
    predicted_static: &[ChannelTensor],
    dopplers: &[f64],
) -> Result<Lemma1Report> {
    let l = truth_static.len();
    if l == 0 || predicted_static.len() != l || dopplers.len() != l {
        return Err(Error::dim(format!(
            "{} true paths, {} predicted, {} dopplers",
            l,
            predicted_static.len(),
            dopplers.len()
        )));
    }
    let grid = truth_static[0].grid;
    let mut diff = ChannelTensor::zeros(truth_static[0].band_id, grid);
    let mut per_path_sum = 0.0;
    for ((t, p), &fd) in truth_static.iter().zip(predicted_static).zip(dopplers) {
        t.check_same_grid(p)?;
        t.check_same_grid(&diff)?;
        let e = t - p;
        per_path_sum += e.energy().sqrt();
        diff.accumulate(&apply_mobility(&e, fd)?)?;
    }
    let m = grid.len() as f64;
    let full = diff.energy().sqrt() / m;
    let per = per_path_sum / (m * l as f64);
    Ok(Lemma1Report {
        full_channel_error: full,
        per_path_error: per,
        ratio: full / per,
        num_paths: l,
    })
}

#[cfg(test)]
mod tests;
