//! Small feedforward networks with hand-written gradients: an FNN that maps
//! per-path Doppler ramps between bands and a conditional VAE that maps
//! static per-path responses between bands.

mod dense;
pub mod features;
mod io;
mod vae;

pub use dense::{Adam, DenseNet, ForwardCache, Gradients};
pub use io::{read_nets, write_nets, ModelMetadata};
pub use vae::{VaeGradients, VaeLoss, VaeNet};

use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Initial Adam step size.
    pub learning_rate: f64,
    /// Cosine decay over training down to `learning_rate · final_lr_fraction`.
    pub final_lr_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the KL term (VAE only).
    pub kl_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            final_lr_fraction: 0.01,
            epochs: 100,
            batch_size: 64,
            kl_weight: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::invalid("final learning-rate fraction must lie in (0, 1]"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be at least 1"));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::invalid("KL weight must be nonnegative"));
        }
        Ok(())
    }

    /// Step size for `epoch` under the cosine schedule.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let progress = if self.epochs > 1 {
            epoch as f64 / (self.epochs - 1) as f64
        } else {
            0.0
        };
        let floor = self.learning_rate * self.final_lr_fraction;
        floor + 0.5 * (self.learning_rate - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FnnConfig {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for FnnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128],
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub train: TrainConfig,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 128],
            latent_dim: 16,
            train: TrainConfig::default(),
        }
    }
}

/// Per-dimension affine standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Dimensions with (near) zero spread get unit scale.
    pub fn fit(rows: &Array2<f64>) -> Self {
        let mean = rows.mean_axis(Axis(0)).expect("nonempty");
        let std = rows.std_axis(Axis(0), 0.0);
        Self {
            std: std.iter().map(|s| if *s > 1e-12 { *s } else { 1.0 }).collect(),
            mean: mean.to_vec(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, rows: &Array2<f64>) -> Array2<f64> {
        let mut out = rows.clone();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    pub fn invert(&self, rows: &Array2<f64>) -> Array2<f64> {
        let mut out = rows.clone();
        for mut row in out.rows_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        out
    }
}

fn to_matrix(rows: &[&[f64]]) -> Result<Array2<f64>> {
    let dim = rows.first().map(|r| r.len()).ok_or_else(|| Error::invalid("empty dataset"))?;
    let mut flat = Vec::with_capacity(rows.len() * dim);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(Error::dim(format!("row {i} has {} values, expected {dim}", r.len())));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("training row {i}")));
        }
        flat.extend_from_slice(r);
    }
    Array2::from_shape_vec((rows.len(), dim), flat).map_err(|e| Error::dim(e.to_string()))
}

fn split_pairs(data: &[(Vec<f64>, Vec<f64>)]) -> Result<(Array2<f64>, Array2<f64>)> {
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let x: Vec<&[f64]> = data.iter().map(|(a, _)| a.as_slice()).collect();
    let y: Vec<&[f64]> = data.iter().map(|(_, b)| b.as_slice()).collect();
    Ok((to_matrix(&x)?, to_matrix(&y)?))
}

fn batch_rows(m: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    m.select(Axis(0), idx)
}

/// Trained mapper with its normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedFnn {
    pub net: DenseNet,
    pub input_norm: Standardizer,
    pub output_norm: Standardizer,
    pub config: FnnConfig,
    /// Mean minibatch loss per epoch (standardized units).
    pub loss_curve: Vec<f64>,
}

impl TrainedFnn {
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict_batch(&to_matrix(&[x])?)?.row(0).to_vec())
    }

    pub fn predict_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_norm.dim() {
            return Err(Error::dim(format!(
                "input has {} values, model expects {}",
                x.ncols(),
                self.input_norm.dim()
            )));
        }
        let y = self.net.forward(self.input_norm.apply(x).view())?;
        Ok(self.output_norm.invert(&y))
    }
}

/// Trains the Doppler-ramp mapper. Same regression as [`train_fnn`].
pub fn train_fnn_mobility(data: &[(Vec<f64>, Vec<f64>)], config: &FnnConfig) -> Result<TrainedFnn> {
    train_fnn(data, config)
}

/// Trains `[input, hidden.., output]` with MSE and Adam on `(input, target)`
/// pairs.
pub fn train_fnn(data: &[(Vec<f64>, Vec<f64>)], config: &FnnConfig) -> Result<TrainedFnn> {
    config.train.validate()?;
    let (x, y) = split_pairs(data)?;
    let input_norm = Standardizer::fit(&x);
    let output_norm = Standardizer::fit(&y);
    let xs = input_norm.apply(&x);
    let ys = output_norm.apply(&y);
    let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
    let mut sizes = vec![x.ncols()];
    sizes.extend(&config.hidden);
    sizes.push(y.ncols());
    let mut net = DenseNet::new(&sizes, &mut rng)?;
    let mut adam = Adam::new(&net, config.train.learning_rate);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut loss_curve = Vec::with_capacity(config.train.epochs);
    for epoch in 0..config.train.epochs {
        adam.learning_rate = config.train.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for idx in order.chunks(config.train.batch_size) {
            let bx = batch_rows(&xs, idx);
            let by = batch_rows(&ys, idx);
            let (out, cache) = net.forward_cached(bx.view())?;
            let diff = out - by;
            let scale = 1.0 / diff.len() as f64;
            let loss = diff.iter().map(|v| v * v).sum::<f64>() * scale;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("FNN loss at epoch {}", loss_curve.len())));
            }
            let (grads, _) = net.backward(&cache, diff.mapv(|v| 2.0 * v * scale).view())?;
            adam.step(&mut net, &grads);
            epoch_loss += loss;
            batches += 1;
        }
        loss_curve.push(epoch_loss / batches as f64);
    }
    Ok(TrainedFnn {
        net,
        input_norm,
        output_norm,
        config: config.clone(),
        loss_curve,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedVae {
    pub vae: VaeNet,
    pub input_norm: Standardizer,
    pub output_norm: Standardizer,
    pub config: VaeConfig,
    /// Mean minibatch total loss per epoch.
    pub loss_curve: Vec<f64>,
}

impl TrainedVae {
    pub fn predict_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_norm.dim() {
            return Err(Error::dim(format!(
                "input has {} values, model expects {}",
                x.ncols(),
                self.input_norm.dim()
            )));
        }
        let y = self.vae.predict_mean(self.input_norm.apply(x).view())?;
        Ok(self.output_norm.invert(&y))
    }
}

/// Mean-latent prediction of one band-n' path vector.
pub fn predict_crossband_path(model: &TrainedVae, x: &[f64]) -> Result<Vec<f64>> {
    Ok(model.predict_batch(&to_matrix(&[x])?)?.row(0).to_vec())
}

/// Trains the conditional VAE on `(band-n vector, band-n' vector)` pairs.
pub fn train_vae_crossband(data: &[(Vec<f64>, Vec<f64>)], config: &VaeConfig) -> Result<TrainedVae> {
    config.train.validate()?;
    let (x, y) = split_pairs(data)?;
    let input_norm = Standardizer::fit(&x);
    let output_norm = Standardizer::fit(&y);
    let xs = input_norm.apply(&x);
    let ys = output_norm.apply(&y);
    let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
    let mut vae = VaeNet::new(x.ncols(), y.ncols(), &config.hidden, config.latent_dim, &mut rng)?;
    let mut adam_enc = Adam::new(&vae.encoder, config.train.learning_rate);
    let mut adam_dec = Adam::new(&vae.decoder, config.train.learning_rate);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut loss_curve = Vec::with_capacity(config.train.epochs);
    for epoch in 0..config.train.epochs {
        adam_enc.learning_rate = config.train.learning_rate_at(epoch);
        adam_dec.learning_rate = adam_enc.learning_rate;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for idx in order.chunks(config.train.batch_size) {
            let bx = batch_rows(&xs, idx);
            let by = batch_rows(&ys, idx);
            let eps = Array2::from_shape_simple_fn((idx.len(), config.latent_dim), || {
                StandardNormal.sample(&mut rng)
            });
            let (loss, grads) = vae
                .loss_and_gradients(bx.view(), by.view(), eps.view(), config.train.kl_weight)
                .map_err(|e| e.in_stage("VAE training"))?;
            adam_enc.step(&mut vae.encoder, &grads.encoder);
            adam_dec.step(&mut vae.decoder, &grads.decoder);
            epoch_loss += loss.total;
            batches += 1;
        }
        loss_curve.push(epoch_loss / batches as f64);
    }
    Ok(TrainedVae {
        vae,
        input_norm,
        output_norm,
        config: config.clone(),
        loss_curve,
    })
}

impl TrainedFnn {
    pub fn metadata(&self) -> ModelMetadata {
        ModelMetadata {
            kind: "fnn".into(),
            input_norm: self.input_norm.clone(),
            output_norm: self.output_norm.clone(),
            config: serde_json::to_value(&self.config).expect("config serializes"),
            loss_curve: self.loss_curve.clone(),
        }
    }

    /// Writes `<stem>.csnn` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        write_nets(File::create(dir.join(format!("{stem}.csnn")))?, &[&self.net])?;
        write_json(&dir.join(format!("{stem}.json")), &self.metadata())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let (mut nets, meta) = load_parts(dir, stem, "fnn", 1)?;
        Ok(Self {
            net: nets.remove(0),
            input_norm: meta.input_norm,
            output_norm: meta.output_norm,
            config: serde_json::from_value(meta.config)?,
            loss_curve: meta.loss_curve,
        })
    }
}

impl TrainedVae {
    pub fn metadata(&self) -> ModelMetadata {
        ModelMetadata {
            kind: "vae".into(),
            input_norm: self.input_norm.clone(),
            output_norm: self.output_norm.clone(),
            config: serde_json::to_value(&self.config).expect("config serializes"),
            loss_curve: self.loss_curve.clone(),
        }
    }

    /// Writes encoder and decoder to `<stem>.csnn` plus `<stem>.json`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        write_nets(
            File::create(dir.join(format!("{stem}.csnn")))?,
            &[&self.vae.encoder, &self.vae.decoder],
        )?;
        write_json(&dir.join(format!("{stem}.json")), &self.metadata())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let (mut nets, meta) = load_parts(dir, stem, "vae", 2)?;
        let decoder = nets.remove(1);
        let encoder = nets.remove(0);
        Ok(Self {
            vae: VaeNet::from_parts(encoder, decoder)?,
            input_norm: meta.input_norm,
            output_norm: meta.output_norm,
            config: serde_json::from_value(meta.config)?,
            loss_curve: meta.loss_curve,
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn load_parts(dir: &Path, stem: &str, kind: &str, count: usize) -> Result<(Vec<DenseNet>, ModelMetadata)> {
    let nets = read_nets(File::open(dir.join(format!("{stem}.csnn")))?)?;
    let meta: ModelMetadata =
        serde_json::from_reader(File::open(dir.join(format!("{stem}.json")))?)?;
    if meta.kind != kind || nets.len() != count {
        return Err(Error::Format(format!(
            "expected a {kind} model with {count} networks, found {} with {}",
            meta.kind,
            nets.len()
        )));
    }
    Ok((nets, meta))
}

/// Mean over a trailing window, used to judge training progress.
pub fn smoothed(curve: &[f64], window: usize) -> Vec<f64> {
    curve
        .windows(window.max(1))
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect()
}

#[cfg(test)]
mod tests;
