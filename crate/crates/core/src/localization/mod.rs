//! Fingerprint localization from static multi-band CSI.
//!
//! A database holds noisy static channel draws for each reference point,
//! one tensor per band. Queries are featurized the same way and matched by
//! k-nearest-neighbor regression (default) or a dense regressor.

mod db;

pub use db::{build_db, DbNoise, FingerprintDB, ReferencePoint};

use std::io::Write;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chanmodel::ChannelTensor;
use crate::error::{Error, Result};
use crate::metrics::Cdf;
use crate::neural::{train_fnn, FnnConfig, Standardizer, TrainedFnn};

/// Flattens per-band tensors into `[re, im, re, im, ..]`, band after band.
/// All tensors must share `T`, `F` and `S`.
pub fn featurize(tensors: &[ChannelTensor]) -> Result<Vec<f64>> {
    let first = tensors.first().ok_or_else(|| Error::invalid("no tensors to featurize"))?;
    let shape = |t: &ChannelTensor| (t.grid.num_packets, t.grid.num_subcarriers, t.grid.num_antennas);
    let mut out = Vec::with_capacity(2 * first.grid.len() * tensors.len());
    for t in tensors {
        if shape(t) != shape(first) {
            return Err(Error::dim(format!(
                "band {} has shape {:?}, band {} has {:?}",
                t.band_id,
                shape(t),
                first.band_id,
                shape(first)
            )));
        }
        out.extend(t.values().iter().flat_map(|z| [z.re, z.im]));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocalizerMethod {
    Knn { k: usize },
    Dnn(FnnConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizerConfig {
    pub method: LocalizerMethod,
    /// Share of each reference point's samples held out for the reported
    /// validation error. Zero skips validation.
    pub validation_fraction: f64,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        Self {
            method: LocalizerMethod::Knn { k: 5 },
            validation_fraction: 0.1,
        }
    }
}

impl LocalizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation_fraction must lie in [0, 1)"));
        }
        match &self.method {
            LocalizerMethod::Knn { k } if *k == 0 => Err(Error::invalid("k must be positive")),
            LocalizerMethod::Dnn(c) => c.train.validate(),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LocalizerKind {
    Knn {
        k: usize,
        /// Normalized feature rows, one per DB record.
        features: Array2<f64>,
        locations: Vec<[f64; 2]>,
    },
    Dnn(TrainedFnn),
    /// Always answers the same location (a database with one point).
    Constant([f64; 2]),
}

/// Trained location estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizerModel {
    pub bands: Vec<u32>,
    pub norm: Standardizer,
    pub kind: LocalizerKind,
    /// Mean error on held-out samples, meters.
    pub validation_error: Option<f64>,
}

fn record_rows(db: &FingerprintDB, pick: impl Fn(usize, usize) -> bool) -> Result<(Vec<Vec<f64>>, Vec<[f64; 2]>)> {
    let mut rows = Vec::new();
    let mut locations = Vec::new();
    for (i, rp) in db.points.iter().enumerate() {
        for (j, s) in rp.samples.iter().enumerate() {
            if pick(i, j) {
                rows.push(featurize(s)?);
                locations.push(rp.location);
            }
        }
    }
    Ok((rows, locations))
}

fn stack(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let dim = rows.first().map_or(0, Vec::len);
    Array2::from_shape_vec((rows.len(), dim), rows.concat()).map_err(|e| Error::dim(e.to_string()))
}

fn fit(
    bands: &[u32],
    rows: &[Vec<f64>],
    locations: Vec<[f64; 2]>,
    method: &LocalizerMethod,
) -> Result<LocalizerModel> {
    let x = stack(rows)?;
    let norm = Standardizer::fit(&x);
    let features = norm.apply(&x);
    let kind = match method {
        LocalizerMethod::Knn { k } => LocalizerKind::Knn {
            k: *k,
            features,
            locations,
        },
        LocalizerMethod::Dnn(config) => {
            let data: Vec<(Vec<f64>, Vec<f64>)> = features
                .rows()
                .into_iter()
                .zip(&locations)
                .map(|(r, l)| (r.to_vec(), l.to_vec()))
                .collect();
            LocalizerKind::Dnn(train_fnn(&data, config)?)
        }
    };
    Ok(LocalizerModel {
        bands: bands.to_vec(),
        norm,
        kind,
        validation_error: None,
    })
}

/// Builds the kNN index or trains the regressor.
///
/// The last `validation_fraction` of each point's samples is held out to
/// measure a validation error. The kNN index is then rebuilt on every
/// record; the regressor keeps the model fitted without the held-out part.
pub fn train_localizer(db: &FingerprintDB, config: &LocalizerConfig) -> Result<LocalizerModel> {
    config.validate()?;
    db.validate()?;
    if db.points.len() < 2 {
        return Err(Error::invalid("a localizer needs at least two reference points"));
    }
    let held_out = |n: usize| ((n as f64 * config.validation_fraction).ceil() as usize).min(n - 1);
    let is_train = |i: usize, j: usize| {
        let n = db.points[i].samples.len();
        j < n - held_out(n)
    };
    let (rows, locations) = record_rows(db, is_train)?;
    let (val_rows, val_locations) = record_rows(db, |i, j| !is_train(i, j))?;
    let mut model = fit(&db.bands, &rows, locations, &config.method)?;
    if !val_rows.is_empty() {
        let mut total = 0.0;
        for (r, l) in val_rows.iter().zip(&val_locations) {
            let p = model.predict_features(r)?;
            total += (p[0] - l[0]).hypot(p[1] - l[1]);
        }
        model.validation_error = Some(total / val_rows.len() as f64);
    }
    if matches!(config.method, LocalizerMethod::Knn { .. }) && !val_rows.is_empty() {
        let validation_error = model.validation_error;
        let (rows, locations) = record_rows(db, |_, _| true)?;
        model = fit(&db.bands, &rows, locations, &config.method)?;
        model.validation_error = validation_error;
    }
    Ok(model)
}

impl LocalizerModel {
    /// Estimator for a single-point database: every query maps to that
    /// point. [`train_localizer`] rejects such databases.
    pub fn constant(db: &FingerprintDB) -> Result<Self> {
        db.validate()?;
        if db.points.len() != 1 {
            return Err(Error::invalid("constant localizer needs exactly one reference point"));
        }
        let (rows, _) = record_rows(db, |_, _| true)?;
        Ok(Self {
            bands: db.bands.clone(),
            norm: Standardizer::identity(rows[0].len()),
            kind: LocalizerKind::Constant(db.points[0].location),
            validation_error: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.norm.dim()
    }

    /// Prediction from raw (unnormalized) features.
    pub fn predict_features(&self, raw: &[f64]) -> Result<[f64; 2]> {
        if raw.len() != self.input_dim() {
            return Err(Error::dim(format!(
                "feature vector has {} values, model expects {}",
                raw.len(),
                self.input_dim()
            )));
        }
        let q: Vec<f64> = raw
            .iter()
            .zip(self.norm.mean.iter().zip(&self.norm.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        match &self.kind {
            LocalizerKind::Knn { k, features, locations } => {
                let mut dist: Vec<(f64, usize)> = features
                    .rows()
                    .into_iter()
                    .enumerate()
                    .map(|(i, r)| (r.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
                    .collect();
                let k = (*k).min(dist.len());
                dist.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).expect("finite distances"));
                let mut acc = [0.0; 2];
                for &(_, i) in &dist[..k] {
                    acc[0] += locations[i][0];
                    acc[1] += locations[i][1];
                }
                Ok([acc[0] / k as f64, acc[1] / k as f64])
            }
            LocalizerKind::Dnn(net) => {
                let out = net.predict(&q)?;
                Ok([out[0], out[1]])
            }
            LocalizerKind::Constant(loc) => Ok(*loc),
        }
    }
}

/// Estimates the location of one query (one static tensor per model band).
pub fn localize(model: &LocalizerModel, query: &[ChannelTensor]) -> Result<[f64; 2]> {
    let bands: Vec<u32> = query.iter().map(|t| t.band_id).collect();
    if bands != model.bands {
        return Err(Error::dim(format!("query bands {bands:?}, model bands {:?}", model.bands)));
    }
    let raw = featurize(query)?;
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("query tensor".into()));
    }
    model.predict_features(&raw)
}

/// A query with known position.
#[derive(Debug, Clone, PartialEq)]
pub struct TestQuery {
    pub location: [f64; 2],
    pub tensors: Vec<ChannelTensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub truth: Vec<[f64; 2]>,
    pub estimates: Vec<[f64; 2]>,
    /// Euclidean error per query, meters, in query order.
    pub errors: Vec<f64>,
    pub mean_error: f64,
    pub median_error: f64,
}

impl LocalizationReport {
    pub fn cdf(&self) -> Cdf {
        Cdf::new(self.errors.clone()).expect("report holds at least one finite error")
    }

    /// `query,true_x,true_y,est_x,est_y,error_m`
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "query,true_x,true_y,est_x,est_y,error_m")?;
        for (i, ((t, e), err)) in self.truth.iter().zip(&self.estimates).zip(&self.errors).enumerate() {
            writeln!(w, "{i},{},{},{},{},{}", t[0], t[1], e[0], e[1], err)?;
        }
        Ok(())
    }

    /// Summary JSON without the per-query arrays.
    pub fn write_summary_json<W: Write>(&self, w: W) -> Result<()> {
        let summary = serde_json::json!({
            "queries": self.errors.len(),
            "mean_error_m": self.mean_error,
            "median_error_m": self.median_error,
        });
        serde_json::to_writer_pretty(w, &summary)?;
        Ok(())
    }
}

/// Localizes every query (in parallel) and summarizes the errors.
pub fn evaluate_localization(model: &LocalizerModel, test: &[TestQuery]) -> Result<LocalizationReport> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let estimates = test
        .par_iter()
        .map(|q| localize(model, &q.tensors))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<[f64; 2]> = test.iter().map(|q| q.location).collect();
    let errors: Vec<f64> = truth
        .iter()
        .zip(&estimates)
        .map(|(t, e)| (t[0] - e[0]).hypot(t[1] - e[1]))
        .collect();
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("localization error".into()));
    }
    let cdf = Cdf::new(errors.clone())?;
    Ok(LocalizationReport {
        mean_error: cdf.mean(),
        median_error: cdf.median(),
        truth,
        estimates,
        errors,
    })
}
