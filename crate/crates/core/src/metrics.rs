//! NMSE and Pearson-correlation scoring of predicted FOA responses.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{ensure, Error, Result};
use crate::field::{Position, SplitKind, FOA_CHANNELS};
use crate::siren::{Checkpoint, Coord, InputNormalization};

/// Reported NMSE for an exact reconstruction.
pub const NMSE_FLOOR_DB: f64 = -300.0;

fn check_shapes(reference: &ArrayView2<f64>, predicted: &ArrayView2<f64>) -> Result<()> {
    ensure!(
        reference.dim() == predicted.dim(),
        "reference shape {:?} differs from prediction shape {:?}",
        reference.dim(),
        predicted.dim()
    );
    ensure!(
        reference.nrows() > 0 && reference.ncols() > 0,
        "empty metric input"
    );
    Ok(())
}

/// Normalized squared error in dB; rows are positions, columns time samples.
/// Errors and reference energy are summed over all positions before the ratio.
pub fn nmse(reference: ArrayView2<f64>, predicted: ArrayView2<f64>) -> Result<f64> {
    check_shapes(&reference, &predicted)?;
    let energy: f64 = reference.iter().map(|v| v * v).sum();
    if !(energy > 0.0) {
        return Err(Error::UndefinedMetric(
            "reference signal has zero energy".into(),
        ));
    }
    let err: f64 = reference
        .iter()
        .zip(predicted.iter())
        .map(|(r, p)| (p - r) * (p - r))
        .sum();
    if err == 0.0 {
        return Ok(NMSE_FLOOR_DB);
    }
    Ok((10.0 * (err / energy).log10()).max(NMSE_FLOOR_DB))
}

/// Mean Pearson correlation over positions plus the number of skipped
/// positions whose reference or prediction has zero variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub mean: f64,
    pub skipped: usize,
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        None
    } else {
        Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
    }
}

/// Per-position correlation of the time series (means removed), averaged.
pub fn pcc(reference: ArrayView2<f64>, predicted: ArrayView2<f64>) -> Result<Correlation> {
    check_shapes(&reference, &predicted)?;
    let mut total = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for (r, p) in reference.outer_iter().zip(predicted.outer_iter()) {
        let r = r.to_vec();
        let p = p.to_vec();
        match pearson(&p, &r) {
            Some(c) => {
                total += c;
                used += 1;
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} position(s) with zero variance excluded from the correlation mean");
    }
    if used == 0 {
        return Err(Error::UndefinedMetric(
            "every position has zero variance".into(),
        ));
    }
    Ok(Correlation {
        mean: total / used as f64,
        skipped,
    })
}

/// Per-channel and aggregated scores for one predictor on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub room: String,
    pub method: String,
    pub train_count: usize,
    /// NMSE in dB per channel (W, X, Y, Z).
    pub nmse: [f64; FOA_CHANNELS],
    pub pcc: [f64; FOA_CHANNELS],
    pub nmse_w: f64,
    /// Arithmetic mean of the X, Y and Z NMSE values in dB.
    pub nmse_xyz: f64,
    pub pcc_w: f64,
    pub pcc_xyz: f64,
    pub pcc_skipped: usize,
}

impl MetricsReport {
    pub fn from_channels(
        nmse: [f64; FOA_CHANNELS],
        pcc: [f64; FOA_CHANNELS],
        pcc_skipped: usize,
    ) -> Self {
        Self {
            room: String::new(),
            method: String::new(),
            train_count: 0,
            nmse,
            pcc,
            nmse_w: nmse[0],
            nmse_xyz: (nmse[1] + nmse[2] + nmse[3]) / 3.0,
            pcc_w: pcc[0],
            pcc_xyz: (pcc[1] + pcc[2] + pcc[3]) / 3.0,
            pcc_skipped,
        }
    }
}

/// Anything that can produce FOA responses at arbitrary positions.
pub trait FieldPredictor: Sync {
    /// Space-time box the predictor was fitted to, when it has one.
    fn normalization(&self) -> Option<InputNormalization>;

    /// Predictions in original amplitude units; one `[4, times.len()]` array per position.
    fn predict(&self, positions: &[Position], times: &[f64]) -> Result<Vec<Array2<f64>>>;
}

const PREDICT_CHUNK: usize = 4096;

impl FieldPredictor for Checkpoint {
    fn normalization(&self) -> Option<InputNormalization> {
        Some(self.network.config.normalization)
    }

    fn predict(&self, positions: &[Position], times: &[f64]) -> Result<Vec<Array2<f64>>> {
        let coords: Vec<Coord> = positions
            .iter()
            .flat_map(|&p| times.iter().map(move |&t| Coord::new(p, t)))
            .collect();
        let blocks = coords
            .par_chunks(PREDICT_CHUNK)
            .map(|chunk| self.network.forward_batch(chunk))
            .collect::<Result<Vec<_>>>()?;
        let mut flat = Vec::with_capacity(coords.len() * FOA_CHANNELS);
        for b in &blocks {
            flat.extend(b.iter().map(|v| v * self.output_scale));
        }
        let len = times.len();
        Ok((0..positions.len())
            .map(|d| {
                Array2::from_shape_fn((FOA_CHANNELS, len), |(c, l)| {
                    flat[(d * len + l) * FOA_CHANNELS + c]
                })
            })
            .collect())
    }
}

/// Scores `predictor` against the ground truth of one dataset split.
pub fn evaluate(
    predictor: &dyn FieldPredictor,
    dataset: &Dataset,
    split: SplitKind,
) -> Result<MetricsReport> {
    let region = &dataset.scene.region;
    if let Some(norm) = predictor.normalization() {
        ensure!(
            norm.covers(&region.space_time_bounds(), 1e-9),
            "predictor normalization range does not cover the dataset region"
        );
    }
    let idx = dataset.indices(split);
    ensure!(!idx.is_empty(), "the {split:?} split is empty");
    let len = dataset.num_samples();
    let fs = dataset.sample_rate();
    let times: Vec<f64> = (0..len).map(|l| l as f64 / fs).collect();
    let positions: Vec<Position> = idx.iter().map(|&d| dataset.rirs[d].position).collect();
    let predictions = predictor.predict(&positions, &times)?;
    ensure!(
        predictions.len() == idx.len(),
        "predictor returned {} responses for {} positions",
        predictions.len(),
        idx.len()
    );
    let mut nmse_c = [0.0; FOA_CHANNELS];
    let mut pcc_c = [0.0; FOA_CHANNELS];
    let mut skipped = 0;
    for c in 0..FOA_CHANNELS {
        let reference = Array2::from_shape_fn((idx.len(), len), |(i, l)| {
            dataset.rirs[idx[i]].samples[[c, l]] as f64
        });
        let predicted = Array2::from_shape_fn((idx.len(), len), |(i, l)| predictions[i][[c, l]]);
        nmse_c[c] = nmse(reference.view(), predicted.view())?;
        match pcc(reference.view(), predicted.view()) {
            Ok(corr) => {
                pcc_c[c] = corr.mean;
                skipped += corr.skipped;
            }
            Err(Error::UndefinedMetric(why)) => {
                log::warn!(
                    "channel {}: correlation undefined ({why})",
                    crate::field::CHANNEL_NAMES[c]
                );
                pcc_c[c] = f64::NAN;
                skipped += idx.len();
            }
            Err(e) => return Err(e),
        }
    }
    Ok(MetricsReport::from_channels(nmse_c, pcc_c, skipped))
}

pub const METRICS_HEADER: &str =
    "room,method,train_count,nmse_w,nmse_xyz,pcc_w,pcc_xyz,nmse_x,nmse_y,nmse_z,pcc_x,pcc_y,pcc_z,pcc_skipped";

#[derive(Serialize, Deserialize)]
struct MetricsRecord {
    room: String,
    method: String,
    train_count: usize,
    nmse_w: f64,
    nmse_xyz: f64,
    pcc_w: f64,
    pcc_xyz: f64,
    nmse_x: f64,
    nmse_y: f64,
    nmse_z: f64,
    pcc_x: f64,
    pcc_y: f64,
    pcc_z: f64,
    pcc_skipped: usize,
}

impl From<&MetricsReport> for MetricsRecord {
    fn from(r: &MetricsReport) -> Self {
        Self {
            room: r.room.clone(),
            method: r.method.clone(),
            train_count: r.train_count,
            nmse_w: r.nmse_w,
            nmse_xyz: r.nmse_xyz,
            pcc_w: r.pcc_w,
            pcc_xyz: r.pcc_xyz,
            nmse_x: r.nmse[1],
            nmse_y: r.nmse[2],
            nmse_z: r.nmse[3],
            pcc_x: r.pcc[1],
            pcc_y: r.pcc[2],
            pcc_z: r.pcc[3],
            pcc_skipped: r.pcc_skipped,
        }
    }
}

impl From<MetricsRecord> for MetricsReport {
    fn from(r: MetricsRecord) -> Self {
        Self {
            room: r.room,
            method: r.method,
            train_count: r.train_count,
            nmse: [r.nmse_w, r.nmse_x, r.nmse_y, r.nmse_z],
            pcc: [r.pcc_w, r.pcc_x, r.pcc_y, r.pcc_z],
            nmse_w: r.nmse_w,
            nmse_xyz: r.nmse_xyz,
            pcc_w: r.pcc_w,
            pcc_xyz: r.pcc_xyz,
            pcc_skipped: r.pcc_skipped,
        }
    }
}

/// One row per (room, method, train count).
pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricsReport]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::io(path, e.into()))?;
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(METRICS_HEADER.split(',')).map_err(io)?;
    for r in rows {
        w.serialize(MetricsRecord::from(r)).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsReport>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?;
    if !headers.iter().eq(METRICS_HEADER.split(',')) {
        return Err(Error::format(path, "unexpected metrics header"));
    }
    reader
        .deserialize::<MetricsRecord>()
        .map(|r| {
            r.map(MetricsReport::from)
                .map_err(|e| Error::format(path, e.to_string()))
        })
        .collect()
}
