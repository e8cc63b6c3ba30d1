//! Training loop: data and collocation batching, adaptive loss weights,
//! Adam with cosine annealing, and best-validation checkpoint retention.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{ensure, Error, Result};
use crate::field::SplitKind;
use crate::metrics::nmse;
use crate::optim::{lr_schedule, Adam, AdamConfig};
use crate::physics::{
    lhs_sample, pairwise_sum, point_prior, total_loss, total_loss_log_eps_grad, LossBreakdown,
    PriorMode,
};
use crate::siren::{
    Checkpoint, Coord, DerivOrder, FieldEvalGrad, Network, NetworkConfig, NetworkParams, OUTPUTS,
};

/// Points per parallel work item. Fixed so the reduction order never depends
/// on the number of worker threads.
const DATA_CHUNK: usize = 1024;
const PRIOR_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub times_per_iter: usize,
    pub collocation_per_iter: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub adam: AdamConfig,
    pub prior_mode: PriorMode,
    /// Seeds parameter initialization.
    pub init_seed: u64,
    /// Seeds time-index draws and collocation batches.
    pub sample_seed: u64,
    pub validation_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 100_000,
            times_per_iter: 250,
            collocation_per_iter: 25_000,
            lr_max: 1e-4,
            lr_min: 1e-6,
            adam: AdamConfig::default(),
            prior_mode: PriorMode::Foa,
            init_seed: 0,
            sample_seed: 0,
            validation_interval: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.iterations >= 1, "iterations must be at least 1");
        ensure!(
            self.times_per_iter >= 1,
            "times_per_iter must be at least 1"
        );
        ensure!(
            self.collocation_per_iter >= 1,
            "collocation_per_iter must be at least 1"
        );
        ensure!(
            self.validation_interval >= 1,
            "validation_interval must be at least 1"
        );
        ensure!(
            self.lr_min > 0.0 && self.lr_max >= self.lr_min && self.lr_max.is_finite(),
            "learning rates must satisfy lr_max >= lr_min > 0 (got {}, {})",
            self.lr_max,
            self.lr_min
        );
        let a = self.adam;
        ensure!(
            (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0,
            "invalid Adam parameters {a:?}"
        );
        Ok(())
    }

    pub fn lr(&self, step: usize) -> f64 {
        lr_schedule(step, self.iterations, self.lr_max, self.lr_min)
    }
}

/// One iteration's inputs: measured samples (normalized units) and collocation points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingBatch {
    pub data_coords: Vec<Coord>,
    pub data_targets: Vec<[f64; OUTPUTS]>,
    pub collocation: Vec<Coord>,
}

/// Mixes a base seed with a step index and a stream tag (splitmix64 finalizer).
fn derive_seed(base: u64, step: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(step.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws the batch for `step`: every train position at `times_per_iter`
/// distinct random time indices, plus a fresh Latin hypercube batch.
pub fn sample_batch(dataset: &Dataset, config: &TrainConfig, step: usize) -> Result<TrainingBatch> {
    let len = dataset.num_samples();
    ensure!(
        config.times_per_iter <= len,
        "times_per_iter {} exceeds the {len} samples per response",
        config.times_per_iter
    );
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.sample_seed, step as u64, 1));
    let mut times = rand::seq::index::sample(&mut rng, len, config.times_per_iter).into_vec();
    times.sort_unstable();
    let fs = dataset.sample_rate();
    let train = dataset.indices(SplitKind::Train);
    let mut batch = TrainingBatch::default();
    batch.data_coords.reserve(train.len() * times.len());
    batch.data_targets.reserve(train.len() * times.len());
    let s = dataset.normalization_scale;
    for &d in train {
        let rir = &dataset.rirs[d];
        for &l in &times {
            batch
                .data_coords
                .push(Coord::new(rir.position, l as f64 / fs));
            batch
                .data_targets
                .push(std::array::from_fn(|c| rir.samples[[c, l]] as f64 * s));
        }
    }
    if config.prior_mode != PriorMode::None {
        let seed = derive_seed(config.sample_seed, step as u64, 2);
        batch.collocation =
            lhs_sample(config.collocation_per_iter, &dataset.scene.region, seed)?.coords;
    }
    Ok(batch)
}

struct ChunkResult {
    /// Per-point penalties, one vector per reported term.
    terms: [Vec<f64>; 3],
    grads: Option<NetworkParams>,
}

fn data_chunk(
    network: &Network,
    coords: &[Coord],
    targets: &[[f64; OUTPUTS]],
    coef: f64,
    want_grad: bool,
) -> Result<ChunkResult> {
    let (evals, tape) = network.eval_batch(coords, DerivOrder::Value)?;
    let mut per_point = Vec::with_capacity(evals.len());
    let mut upstream = Vec::with_capacity(if want_grad { evals.len() } else { 0 });
    for (e, t) in evals.iter().zip(targets) {
        let out = e.outputs();
        per_point.push((0..OUTPUTS).map(|c| (out[c] - t[c]).abs()).sum());
        if want_grad {
            let mut g = FieldEvalGrad::default();
            for c in 0..OUTPUTS {
                let diff = out[c] - t[c];
                g.value[c] = if diff > 0.0 {
                    coef
                } else if diff < 0.0 {
                    -coef
                } else {
                    0.0
                };
            }
            upstream.push(g);
        }
    }
    let grads = if want_grad {
        Some(tape.backward(&network.params, &upstream)?)
    } else {
        None
    };
    Ok(ChunkResult {
        terms: [per_point, Vec::new(), Vec::new()],
        grads,
    })
}

fn prior_chunk(
    network: &Network,
    coords: &[Coord],
    mode: PriorMode,
    c0: f64,
    coef: f64,
    want_grad: bool,
) -> Result<ChunkResult> {
    let order = if mode == PriorMode::Wave {
        DerivOrder::Second
    } else {
        DerivOrder::First
    };
    let (evals, tape) = network.eval_batch(coords, order)?;
    let mut terms = [Vec::new(), Vec::new(), Vec::new()];
    let mut upstream = Vec::with_capacity(if want_grad { evals.len() } else { 0 });
    for e in &evals {
        let p = point_prior(e, mode, c0)?;
        terms[0].push(p.momentum);
        terms[1].push(p.continuity);
        terms[2].push(p.wave);
        if want_grad {
            let mut g = p.grad;
            g.jac.iter_mut().flatten().for_each(|v| *v *= coef);
            g.second.iter_mut().for_each(|v| *v *= coef);
            upstream.push(g);
        }
    }
    let grads = if want_grad {
        Some(tape.backward(&network.params, &upstream)?)
    } else {
        None
    };
    Ok(ChunkResult { terms, grads })
}

/// Total loss of `batch` and, when requested, its gradient with respect to
/// every parameter including both log-eps weights.
fn objective(
    network: &Network,
    batch: &TrainingBatch,
    mode: PriorMode,
    c0: f64,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<NetworkParams>)> {
    ensure!(!batch.data_coords.is_empty(), "empty data batch");
    ensure!(
        batch.data_coords.len() == batch.data_targets.len(),
        "{} data coordinates for {} targets",
        batch.data_coords.len(),
        batch.data_targets.len()
    );
    let use_prior = mode != PriorMode::None;
    ensure!(
        !use_prior || !batch.collocation.is_empty(),
        "empty collocation batch"
    );
    let eps_d = network.params.eps_data();
    let eps_p = network.params.eps_prior();
    let n_data = batch.data_coords.len();
    let coef_d = 1.0 / (n_data as f64 * 2.0 * eps_d * eps_d);
    let n_prior = batch.collocation.len().max(1);
    let coef_p = 1.0 / (n_prior as f64 * 2.0 * eps_p * eps_p);

    let data_chunks = batch
        .data_coords
        .par_chunks(DATA_CHUNK)
        .zip(batch.data_targets.par_chunks(DATA_CHUNK))
        .map(|(c, t)| data_chunk(network, c, t, coef_d, want_grad))
        .collect::<Result<Vec<_>>>()?;
    let prior_chunks = if use_prior {
        batch
            .collocation
            .par_chunks(PRIOR_CHUNK)
            .map(|c| prior_chunk(network, c, mode, c0, coef_p, want_grad))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    let mean_of = |chunks: &[ChunkResult], term: usize, n: usize| {
        let all: Vec<f64> = chunks
            .iter()
            .flat_map(|c| c.terms[term].iter().copied())
            .collect();
        pairwise_sum(&all) / n as f64
    };
    let data = mean_of(&data_chunks, 0, n_data);
    let (momentum, continuity, wave) = if use_prior {
        (
            mean_of(&prior_chunks, 0, n_prior),
            mean_of(&prior_chunks, 1, n_prior),
            mean_of(&prior_chunks, 2, n_prior),
        )
    } else {
        (0.0, 0.0, 0.0)
    };
    let prior = momentum + continuity + wave;
    let total = total_loss(data, prior, 0.0, eps_d, eps_p)?;
    let loss = LossBreakdown {
        data,
        momentum,
        continuity,
        wave,
        total,
        eps_data: eps_d,
        eps_prior: eps_p,
    };
    if !want_grad {
        return Ok((loss, None));
    }
    let mut grads = network.params.zeros_like();
    for chunk in data_chunks.iter().chain(&prior_chunks) {
        if let Some(g) = &chunk.grads {
            grads.add_scaled(1.0, g);
        }
    }
    let (g_d, g_p) = total_loss_log_eps_grad(data, prior, eps_d, eps_p);
    grads.log_eps_data = g_d;
    grads.log_eps_prior = g_p;
    Ok((loss, Some(grads)))
}

/// Loss terms for `batch` without gradients.
pub fn evaluate_loss(
    network: &Network,
    batch: &TrainingBatch,
    mode: PriorMode,
    c0: f64,
) -> Result<LossBreakdown> {
    objective(network, batch, mode, c0, false).map(|(l, _)| l)
}

/// Loss terms for `batch` and the gradient of the total loss.
pub fn loss_and_grad(
    network: &Network,
    batch: &TrainingBatch,
    mode: PriorMode,
    c0: f64,
) -> Result<(LossBreakdown, NetworkParams)> {
    let (loss, grads) = objective(network, batch, mode, c0, true)?;
    Ok((loss, grads.expect("gradient requested")))
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    pub loss: LossBreakdown,
    pub lr: f64,
    pub val_nmse_w: Option<f64>,
}

pub const HISTORY_HEADER: &str =
    "step,loss_total,loss_data,loss_momentum,loss_continuity,loss_wave,eps_data,eps_prior,lr,val_nmse_w";

#[derive(Serialize, Deserialize)]
struct HistoryRecord {
    step: usize,
    loss_total: f64,
    loss_data: f64,
    loss_momentum: f64,
    loss_continuity: f64,
    loss_wave: f64,
    eps_data: f64,
    eps_prior: f64,
    lr: f64,
    val_nmse_w: Option<f64>,
}

impl From<&HistoryRow> for HistoryRecord {
    fn from(r: &HistoryRow) -> Self {
        Self {
            step: r.step,
            loss_total: r.loss.total,
            loss_data: r.loss.data,
            loss_momentum: r.loss.momentum,
            loss_continuity: r.loss.continuity,
            loss_wave: r.loss.wave,
            eps_data: r.loss.eps_data,
            eps_prior: r.loss.eps_prior,
            lr: r.lr,
            val_nmse_w: r.val_nmse_w,
        }
    }
}

impl From<HistoryRecord> for HistoryRow {
    fn from(r: HistoryRecord) -> Self {
        Self {
            step: r.step,
            loss: LossBreakdown {
                data: r.loss_data,
                momentum: r.loss_momentum,
                continuity: r.loss_continuity,
                wave: r.loss_wave,
                total: r.loss_total,
                eps_data: r.eps_data,
                eps_prior: r.eps_prior,
            },
            lr: r.lr,
            val_nmse_w: r.val_nmse_w,
        }
    }
}

/// Streams history rows as CSV; the header is written up front so even an
/// immediately diverging run leaves a well-formed file.
pub struct HistoryWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> HistoryWriter<W> {
    pub fn new(out: W) -> std::io::Result<Self> {
        let mut inner = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        inner.write_record(HISTORY_HEADER.split(','))?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &HistoryRow) -> std::io::Result<()> {
        self.inner.serialize(HistoryRecord::from(row))?;
        Ok(())
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

pub fn write_history<W: Write>(out: W, rows: &[HistoryRow]) -> std::io::Result<()> {
    let mut w = HistoryWriter::new(out)?;
    for r in rows {
        w.write(r)?;
    }
    w.flush()
}

pub fn parse_history(text: &str) -> Result<Vec<HistoryRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Validation(format!("history: {e}")))?;
    ensure!(
        headers.iter().eq(HISTORY_HEADER.split(',')),
        "unexpected history header"
    );
    reader
        .deserialize::<HistoryRecord>()
        .map(|r| {
            r.map(HistoryRow::from)
                .map_err(|e| Error::Validation(format!("history: {e}")))
        })
        .collect()
}

pub fn read_history(path: impl AsRef<std::path::Path>) -> Result<Vec<HistoryRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_history(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Mutable optimization state owned by the training thread.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub network: Network,
    pub adam: Adam,
    /// Number of updates applied so far.
    pub step: usize,
    pub best_val_nmse_w: f64,
    pub best: Option<Checkpoint>,
}

impl TrainState {
    pub fn new(network: Network, adam: AdamConfig) -> Self {
        let adam = Adam::new(adam, &network.params);
        Self {
            network,
            adam,
            step: 0,
            best_val_nmse_w: f64::INFINITY,
            best: None,
        }
    }
}

fn diagnostics(state: &TrainState, loss: &LossBreakdown, lr: f64) -> String {
    format!(
        "lr={lr:e}, eps_data={:e}, eps_prior={:e}, data={:e}, momentum={:e}, continuity={:e}, wave={:e}, total={:e}, params_finite={}",
        state.network.params.eps_data(),
        state.network.params.eps_prior(),
        loss.data,
        loss.momentum,
        loss.continuity,
        loss.wave,
        loss.total,
        state.network.params.is_finite()
    )
}

/// Applies one Adam update for `batch`; returns the loss measured before it.
pub fn train_step(
    state: &mut TrainState,
    batch: &TrainingBatch,
    config: &TrainConfig,
    c0: f64,
) -> Result<(LossBreakdown, f64)> {
    let lr = config.lr(state.step);
    let (loss, grads) = loss_and_grad(&state.network, batch, config.prior_mode, c0)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Divergence {
            step: state.step,
            diagnostics: diagnostics(state, &loss, lr),
        });
    }
    state.adam.step(&mut state.network.params, &grads, lr);
    if !state.network.params.is_finite() {
        return Err(Error::Divergence {
            step: state.step,
            diagnostics: diagnostics(state, &loss, lr),
        });
    }
    state.step += 1;
    Ok((loss, lr))
}

/// NMSE of the W channel over the validation split, in normalized units.
pub fn validation_nmse_w(network: &Network, dataset: &Dataset) -> Result<f64> {
    let idx = dataset.indices(SplitKind::Validation);
    ensure!(!idx.is_empty(), "validation split is empty");
    let len = dataset.num_samples();
    let fs = dataset.sample_rate();
    let coords: Vec<Coord> = idx
        .iter()
        .flat_map(|&d| (0..len).map(move |l| Coord::new(dataset.rirs[d].position, l as f64 / fs)))
        .collect();
    let blocks = coords
        .par_chunks(DATA_CHUNK * 4)
        .map(|c| network.forward_batch(c))
        .collect::<Result<Vec<_>>>()?;
    let predicted: Vec<f64> = blocks.iter().flat_map(|b| b.column(0).to_vec()).collect();
    let s = dataset.normalization_scale;
    let reference: Vec<f64> = idx
        .iter()
        .flat_map(|&d| {
            dataset.rirs[d]
                .samples
                .row(0)
                .iter()
                .map(move |&v| v as f64 * s)
                .collect::<Vec<_>>()
        })
        .collect();
    let shape = (idx.len(), len);
    nmse(
        ndarray::ArrayView2::from_shape(shape, &reference).expect("shape"),
        ndarray::ArrayView2::from_shape(shape, &predicted).expect("shape"),
    )
}

/// Result of a complete training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Checkpoint with the lowest validation NMSE(W).
    pub best: Checkpoint,
    pub best_val_nmse_w: f64,
    pub final_network: Network,
    pub history: Vec<HistoryRow>,
}

/// Trains a freshly initialized network on `dataset`.
///
/// `on_row` sees every history row as soon as it exists, so callers can
/// persist partial progress if training later diverges.
pub fn train(
    dataset: &Dataset,
    net_config: NetworkConfig,
    config: &TrainConfig,
    mut on_row: impl FnMut(&HistoryRow),
) -> Result<TrainOutcome> {
    config.validate()?;
    dataset.validate()?;
    ensure!(
        net_config
            .normalization
            .covers(&dataset.scene.region.space_time_bounds(), 1e-9),
        "network input normalization does not cover the dataset region"
    );
    ensure!(
        !dataset.indices(SplitKind::Train).is_empty(),
        "training split is empty"
    );
    let c0 = dataset.scene.constants.c0;
    let network = Network::init(net_config, config.init_seed)?;
    let mut state = TrainState::new(network, config.adam);
    let mut history = Vec::with_capacity(config.iterations);
    while state.step < config.iterations {
        let batch = sample_batch(dataset, config, state.step)?;
        let (loss, lr) = train_step(&mut state, &batch, config, c0)?;
        let mut row = HistoryRow {
            step: state.step,
            loss,
            lr,
            val_nmse_w: None,
        };
        if state.step % config.validation_interval == 0 {
            let val = validation_nmse_w(&state.network, dataset)?;
            row.val_nmse_w = Some(val);
            if val < state.best_val_nmse_w || state.best.is_none() {
                state.best_val_nmse_w = val.min(state.best_val_nmse_w);
                state.best = Some(Checkpoint {
                    network: state.network.clone(),
                    step: state.step as u64,
                    output_scale: 1.0 / dataset.normalization_scale,
                });
            }
            log::info!(
                "step {} total {:.4e} data {:.4e} val NMSE(W) {:.2} dB",
                state.step,
                loss.total,
                loss.data,
                val
            );
        }
        on_row(&row);
        history.push(row);
    }
    let best = match state.best.take() {
        Some(b) => b,
        // Fewer iterations than one interval: keep the final parameters.
        None => {
            let val = validation_nmse_w(&state.network, dataset)?;
            state.best_val_nmse_w = val;
            Checkpoint {
                network: state.network.clone(),
                step: state.step as u64,
                output_scale: 1.0 / dataset.normalization_scale,
            }
        }
    };
    Ok(TrainOutcome {
        best,
        best_val_nmse_w: state.best_val_nmse_w,
        final_network: state.network,
        history,
    })
}
