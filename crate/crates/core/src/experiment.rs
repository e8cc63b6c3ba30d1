//! Experiment configuration and the simulate / train / eval / plot pipeline.
//!
//! Output layout under the chosen directory:
//!
//! ```text
//! room-<seed>/experiment.toml        resolved configuration
//! room-<seed>/dataset/               manifest.json + rirs.f32le
//! room-<seed>/<method>/checkpoint.bin
//! room-<seed>/<method>/history.csv
//! metrics.csv
//! plots/room-<seed>/{truth,<method>}_t<k>.{ppm,csv}
//! ```

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{ensure, Error, Result};
use crate::field::{Position, SplitKind};
use crate::ism::{enumerate_images, field_at, SceneSampler};
use crate::metrics::{evaluate, write_metrics_csv, MetricsReport};
use crate::physics::PriorMode;
use crate::plot::{slice_points, Slice};
use crate::siren::{Checkpoint, Coord, InputNormalization, NetworkConfig};
use crate::trainer::{train, HistoryWriter, TrainConfig, TrainOutcome};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "experiment.toml";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden_layers: usize,
    pub width: usize,
    pub omega0: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            hidden_layers: 3,
            width: 512,
            omega0: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    /// Slice height as a fraction of the region's z extent.
    pub z_fraction: f64,
    /// Time instants in seconds.
    pub times: Vec<f64>,
    /// Grid points per side of each slice.
    pub resolution: usize,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self {
            z_fraction: 0.5,
            times: vec![0.005, 0.010, 0.015, 0.020],
            resolution: 64,
        }
    }
}

/// Everything one experiment needs. The defaults are the full-scale
/// protocol; [`ExperimentConfig::desk_scale`] is the reduced profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Room seeds; each seeds one random scene.
    pub rooms: Vec<u64>,
    pub methods: Vec<PriorMode>,
    pub grid_spacing: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub split_seed: u64,
    pub scene: SceneSampler,
    pub network: NetworkSection,
    /// Shared by all methods; `prior_mode` is replaced per method.
    pub train: TrainConfig,
    pub plot: PlotConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            rooms: (1..=10).collect(),
            methods: PriorMode::ALL.to_vec(),
            grid_spacing: 0.05,
            n_train: 250,
            n_val: 50,
            split_seed: 0,
            scene: SceneSampler::default(),
            network: NetworkSection::default(),
            train: TrainConfig::default(),
            plot: PlotConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reduced profile: 3 rooms, 11^3 grid, 100 / 25 train / validation
    /// positions, 50 ms at 8 kHz, K=3 width 128, 10k iterations, 4000
    /// collocation points.
    pub fn desk_scale() -> Self {
        let base = Self::default();
        Self {
            rooms: vec![1, 2, 3],
            grid_spacing: 0.1,
            n_train: 100,
            n_val: 25,
            scene: SceneSampler {
                duration: 0.05,
                ..base.scene
            },
            network: NetworkSection {
                width: 128,
                ..base.network
            },
            train: TrainConfig {
                iterations: 10_000,
                collocation_per_iter: 4000,
                ..base.train
            },
            ..base
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.rooms.is_empty(), "config lists no rooms");
        ensure!(!self.methods.is_empty(), "config lists no methods");
        ensure!(
            self.grid_spacing.is_finite() && self.grid_spacing > 0.0,
            "grid spacing must be positive"
        );
        ensure!(self.n_train >= 1, "n_train must be at least 1");
        ensure!(self.n_val >= 1, "n_val must be at least 1");
        ensure!(
            (0.0..=1.0).contains(&self.plot.z_fraction),
            "plot z_fraction must lie in [0, 1]"
        );
        ensure!(
            self.plot.resolution >= 2,
            "plot resolution must be at least 2"
        );
        ensure!(
            self.plot.times.iter().all(|t| t.is_finite() && *t >= 0.0),
            "plot times must be non-negative"
        );
        self.train.validate()
    }

    /// Training configuration for one method.
    pub fn train_config(&self, method: PriorMode) -> TrainConfig {
        TrainConfig {
            prior_mode: method,
            ..self.train
        }
    }

    pub fn network_config(&self, dataset: &Dataset) -> NetworkConfig {
        NetworkConfig::new(
            self.network.hidden_layers,
            self.network.width,
            self.network.omega0,
            InputNormalization::from_region(&dataset.scene.region),
        )
    }
}

pub fn room_name(seed: u64) -> String {
    format!("room-{seed}")
}

pub fn room_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(room_name(seed))
}

pub fn dataset_dir(out: &Path, seed: u64) -> PathBuf {
    room_dir(out, seed).join("dataset")
}

pub fn method_dir(out: &Path, seed: u64, method: PriorMode) -> PathBuf {
    room_dir(out, seed).join(method.name())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Simulates and writes one dataset per room.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let mut dirs = Vec::new();
    for &seed in &cfg.rooms {
        let scene = cfg.scene.sample(seed)?;
        let dataset = Dataset::simulate(
            scene,
            cfg.grid_spacing,
            cfg.n_train,
            cfg.n_val,
            cfg.split_seed,
            Some(seed),
        )?;
        let room = room_dir(out, seed);
        create_dir(&room)?;
        let cfg_path = room.join(CONFIG_FILE);
        std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
        let dir = dataset_dir(out, seed);
        dataset.write(&dir)?;
        log::info!(
            "{}: {} positions x {} samples, reflection order {}",
            room_name(seed),
            dataset.num_positions(),
            dataset.num_samples(),
            dataset.scene.max_reflection_order
        );
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Trains one method on one room, writing the history row by row and the
/// best checkpoint at the end. Rows written before a divergence stay on disk.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    out: &Path,
    seed: u64,
    method: PriorMode,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dataset = Dataset::read(dataset_dir(out, seed))?;
    let dir = method_dir(out, seed, method);
    create_dir(&dir)?;
    let history_path = dir.join(HISTORY_FILE);
    let file = File::create(&history_path).map_err(|e| Error::io(&history_path, e))?;
    let mut writer =
        HistoryWriter::new(BufWriter::new(file)).map_err(|e| Error::io(&history_path, e))?;
    let mut write_error = None;
    let outcome = train(
        &dataset,
        cfg.network_config(&dataset),
        &cfg.train_config(method),
        |row| {
            let res = writer.write(row).and_then(|_| {
                if row.val_nmse_w.is_some() {
                    writer.flush()
                } else {
                    Ok(())
                }
            });
            if let Err(e) = res {
                write_error.get_or_insert(e);
            }
        },
    );
    let flushed = writer.flush();
    let outcome = outcome?;
    if let Some(e) = write_error {
        return Err(Error::io(&history_path, e));
    }
    flushed.map_err(|e| Error::io(&history_path, e))?;
    outcome.best.write(dir.join(CHECKPOINT_FILE))?;
    Ok(outcome)
}

/// Scores every available (room, method) checkpoint on the evaluation split
/// and writes `metrics.csv`. Missing checkpoints are skipped with a warning.
pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<MetricsReport>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &seed in &cfg.rooms {
        let mut dataset = None;
        for &method in &cfg.methods {
            let path = method_dir(out, seed, method).join(CHECKPOINT_FILE);
            if !path.exists() {
                log::warn!("no checkpoint at {}; skipping", path.display());
                continue;
            }
            let checkpoint = Checkpoint::read(&path)?;
            if dataset.is_none() {
                dataset = Some(Dataset::read(dataset_dir(out, seed))?);
            }
            let ds = dataset.as_ref().expect("loaded above");
            let mut report = evaluate(&checkpoint, ds, SplitKind::Evaluation)?;
            report.room = room_name(seed);
            report.method = method.name().to_string();
            report.train_count = ds.indices(SplitKind::Train).len();
            log::info!(
                "{} {}: NMSE(W) {:.2} dB, NMSE(XYZ) {:.2} dB, PCC(W) {:.3}, PCC(XYZ) {:.3}",
                report.room,
                report.method,
                report.nmse_w,
                report.nmse_xyz,
                report.pcc_w,
                report.pcc_xyz
            );
            rows.push(report);
        }
    }
    ensure!(
        !rows.is_empty(),
        "no checkpoints found under {}",
        out.display()
    );
    write_metrics_csv(out.join(METRICS_FILE), &rows)?;
    Ok(rows)
}

pub fn plot_dir(out: &Path, seed: u64) -> PathBuf {
    out.join("plots").join(room_name(seed))
}

/// Writes ground-truth and predicted W slices for every room, method and
/// requested time. Truth and predictions share the truth's symmetric range.
pub fn cmd_plot(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let mut written = Vec::new();
    for &seed in &cfg.rooms {
        let dataset = Dataset::read(dataset_dir(out, seed))?;
        let scene = &dataset.scene;
        let region = scene.region;
        let z =
            region.min_corner.z + cfg.plot.z_fraction * (region.max_corner.z - region.min_corner.z);
        let (xs, ys, points) = slice_points(&region, z, cfg.plot.resolution)?;
        let images = enumerate_images(scene)?;
        let checkpoints: Vec<(PriorMode, Checkpoint)> = cfg
            .methods
            .iter()
            .filter_map(|&m| {
                let path = method_dir(out, seed, m).join(CHECKPOINT_FILE);
                if path.exists() {
                    Some(Checkpoint::read(&path).map(|c| (m, c)))
                } else {
                    log::warn!("no checkpoint at {}; plotting truth only", path.display());
                    None
                }
            })
            .collect::<Result<_>>()?;
        let dir = plot_dir(out, seed);
        for (k, &t) in cfg.plot.times.iter().enumerate() {
            ensure!(
                t <= region.time_horizon,
                "plot time {t} s exceeds the {} s horizon",
                region.time_horizon
            );
            let truth: Vec<f64> = points
                .iter()
                .map(|p| {
                    field_at(&images, p, t, scene.sample_rate, scene.constants.c0).map(|f| f[0])
                })
                .collect::<Result<_>>()?;
            let make = |values| Slice {
                n: cfg.plot.resolution,
                z,
                time: t,
                values,
                xs: xs.clone(),
                ys: ys.clone(),
            };
            let truth = make(truth);
            let range = truth.max_abs();
            let stem = dir.join(format!("truth_t{k}"));
            truth.write(&stem, range)?;
            written.push(stem);
            for (method, ckpt) in &checkpoints {
                let values = predict_w(ckpt, &points, t)?;
                let stem = dir.join(format!("{}_t{k}", method.name()));
                make(values).write(&stem, range)?;
                written.push(stem);
            }
        }
    }
    Ok(written)
}

fn predict_w(ckpt: &Checkpoint, points: &[Position], t: f64) -> Result<Vec<f64>> {
    let coords: Vec<Coord> = points.iter().map(|&p| Coord::new(p, t)).collect();
    let out = ckpt.network.forward_batch(&coords)?;
    Ok(out
        .column(0)
        .iter()
        .map(|v| v * ckpt.output_scale)
        .collect())
}
