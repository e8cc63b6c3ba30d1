//! Dataset container: a JSON manifest next to a raw little-endian `f32`
//! tensor shaped `[D, 4, L]`.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::field::{make_grid, split_dataset, FoaRir, Position, Split, SplitKind, FOA_CHANNELS};
use crate::ism::{render_grid, Scene};

pub const DATASET_FORMAT: &str = "foa-pinn-dataset";
pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TENSOR_FILE: &str = "rirs.f32le";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scene: Scene,
    /// Seed the scene was drawn from, when it was sampled.
    pub room_seed: Option<u64>,
    pub grid_spacing: f64,
    pub rirs: Vec<FoaRir>,
    pub split: Split,
    pub split_seed: u64,
    /// Multiplier applied to all channels before training: `1 / max|W|` over the train split.
    pub normalization_scale: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    room_seed: Option<u64>,
    scene: Scene,
    sample_rate: f64,
    duration: f64,
    grid_spacing: f64,
    num_positions: usize,
    num_samples: usize,
    channels: Vec<String>,
    positions: Vec<[f64; 3]>,
    split_seed: u64,
    split: Split,
    normalization_scale: f64,
    tensor_file: String,
}

fn train_scale(rirs: &[FoaRir], split: &Split) -> f64 {
    let peak = split
        .train
        .iter()
        .flat_map(|&d| rirs[d].samples.row(0).to_vec())
        .fold(0f32, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        1.0 / peak as f64
    } else {
        1.0
    }
}

impl Dataset {
    pub fn new(
        scene: Scene,
        grid_spacing: f64,
        rirs: Vec<FoaRir>,
        split: Split,
        split_seed: u64,
        room_seed: Option<u64>,
    ) -> Result<Self> {
        let normalization_scale = train_scale(&rirs, &split);
        let ds = Self {
            scene,
            room_seed,
            grid_spacing,
            rirs,
            split,
            split_seed,
            normalization_scale,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Renders the scene on its region grid and splits the positions.
    pub fn simulate(
        scene: Scene,
        grid_spacing: f64,
        n_train: usize,
        n_val: usize,
        split_seed: u64,
        room_seed: Option<u64>,
    ) -> Result<Self> {
        scene.validate()?;
        let positions = make_grid(&scene.region, grid_spacing)?;
        let split = split_dataset(positions.len(), n_train, n_val, split_seed)?;
        let rirs = render_grid(&scene, &positions)?;
        Self::new(scene, grid_spacing, rirs, split, split_seed, room_seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        ensure!(!self.rirs.is_empty(), "dataset holds no impulse responses");
        ensure!(
            self.grid_spacing.is_finite() && self.grid_spacing > 0.0,
            "grid spacing must be positive"
        );
        let (len, fs) = (self.rirs[0].len(), self.rirs[0].sample_rate);
        for (d, rir) in self.rirs.iter().enumerate() {
            ensure!(
                rir.len() == len && rir.sample_rate == fs,
                "impulse response {d} differs in length or sample rate"
            );
            ensure!(
                self.scene.region.contains(&rir.position, 1e-9),
                "position {d} lies outside the target region"
            );
        }
        ensure!(
            fs == self.scene.sample_rate,
            "impulse responses are sampled at {fs} Hz but the scene declares {} Hz",
            self.scene.sample_rate
        );
        ensure!(
            self.normalization_scale.is_finite() && self.normalization_scale > 0.0,
            "normalization scale must be positive"
        );
        self.split.validate(self.rirs.len())
    }

    pub fn num_positions(&self) -> usize {
        self.rirs.len()
    }

    pub fn num_samples(&self) -> usize {
        self.rirs[0].len()
    }

    pub fn sample_rate(&self) -> f64 {
        self.rirs[0].sample_rate
    }

    pub fn positions(&self) -> Vec<Position> {
        self.rirs.iter().map(|r| r.position).collect()
    }

    pub fn indices(&self, kind: SplitKind) -> &[usize] {
        self.split.indices(kind)
    }

    /// Samples of position `d` in original units, shape `[4, L]`.
    pub fn samples(&self, d: usize) -> ArrayView2<'_, f32> {
        self.rirs[d].samples.view()
    }

    /// Samples of position `d` scaled by the normalization factor.
    pub fn normalized(&self, d: usize) -> Array2<f64> {
        let s = self.normalization_scale;
        self.rirs[d].samples.mapv(|v| v as f64 * s)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = Manifest {
            format: DATASET_FORMAT.to_string(),
            version: DATASET_VERSION,
            room_seed: self.room_seed,
            scene: self.scene.clone(),
            sample_rate: self.sample_rate(),
            duration: self.scene.duration,
            grid_spacing: self.grid_spacing,
            num_positions: self.num_positions(),
            num_samples: self.num_samples(),
            channels: ["W", "X", "Y", "Z"].map(String::from).to_vec(),
            positions: self.rirs.iter().map(|r| r.position.to_array()).collect(),
            split_seed: self.split_seed,
            split: self.split.clone(),
            normalization_scale: self.normalization_scale,
            tensor_file: TENSOR_FILE.to_string(),
        };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::format(&path, e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;

        let mut bytes =
            Vec::with_capacity(self.num_positions() * FOA_CHANNELS * self.num_samples() * 4);
        for rir in &self.rirs {
            for v in rir.samples.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let path = dir.join(TENSOR_FILE);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if manifest.format != DATASET_FORMAT {
            return Err(Error::format(
                &path,
                format!("unexpected format tag {:?}", manifest.format),
            ));
        }
        if manifest.version != DATASET_VERSION {
            return Err(Error::format(
                &path,
                format!(
                    "version {} is not supported (expected {DATASET_VERSION})",
                    manifest.version
                ),
            ));
        }
        ensure!(
            manifest.positions.len() == manifest.num_positions,
            "manifest lists {} positions but declares {}",
            manifest.positions.len(),
            manifest.num_positions
        );
        ensure!(manifest.num_samples > 0, "manifest declares zero samples");
        ensure!(
            manifest.channels.len() == FOA_CHANNELS,
            "manifest declares {} channels",
            manifest.channels.len()
        );

        let tensor_path = dir.join(&manifest.tensor_file);
        let bytes = fs::read(&tensor_path).map_err(|e| Error::io(&tensor_path, e))?;
        let per_position = FOA_CHANNELS * manifest.num_samples * 4;
        if bytes.len() % per_position != 0 {
            return Err(Error::format(
                &tensor_path,
                format!(
                    "shape disagreement: {} bytes is not a whole number of [4, {}] f32 records",
                    bytes.len(),
                    manifest.num_samples
                ),
            ));
        }
        let stored = bytes.len() / per_position;
        ensure!(
            stored == manifest.num_positions,
            "manifest declares D={} but the tensor holds D={stored}",
            manifest.num_positions
        );

        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let rirs = values
            .chunks_exact(FOA_CHANNELS * manifest.num_samples)
            .zip(&manifest.positions)
            .map(|(chunk, &p)| {
                let samples =
                    Array2::from_shape_vec((FOA_CHANNELS, manifest.num_samples), chunk.to_vec())
                        .expect("chunk length matches shape");
                FoaRir::new(Position::from_array(p), manifest.sample_rate, samples)
            })
            .collect::<Result<Vec<_>>>()?;

        let ds = Self {
            scene: manifest.scene,
            room_seed: manifest.room_seed,
            grid_spacing: manifest.grid_spacing,
            rirs,
            split: manifest.split,
            split_seed: manifest.split_seed,
            normalization_scale: manifest.normalization_scale,
        };
        ds.validate()?;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{PhysicalConstants, TargetRegion};

    pub(crate) fn tiny_dataset() -> Dataset {
        let scene = Scene {
            room_dims: [4.0, 3.5, 2.8],
            source: Position::new(0.8, 0.9, 1.1),
            region: TargetRegion::cube(Position::new(2.0, 1.5, 1.0), 0.2, 0.01).unwrap(),
            wall_absorption: [0.3; 6],
            max_reflection_order: 2,
            sample_rate: 8000.0,
            duration: 0.01,
            constants: PhysicalConstants::default(),
        };
        Dataset::simulate(scene, 0.1, 10, 5, 9, Some(3)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let back = Dataset::read(dir.path()).unwrap();
        assert_eq!(ds.scene, back.scene);
        assert_eq!(ds.split, back.split);
        assert_eq!(ds.normalization_scale, back.normalization_scale);
        for (a, b) in ds.rirs.iter().zip(&back.rirs) {
            assert_eq!(a.position, b.position);
            assert_eq!(a.sample_rate, b.sample_rate);
        }
        assert_eq!(ds, back);
        for (a, b) in ds.rirs.iter().zip(&back.rirs) {
            assert!(a
                .samples
                .iter()
                .zip(b.samples.iter())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn normalization_uses_train_peak() {
        let ds = tiny_dataset();
        let peak = ds
            .split
            .train
            .iter()
            .map(|&d| ds.normalized(d).row(0).fold(0f64, |m, v| m.max(v.abs())))
            .fold(0f64, f64::max);
        assert!((peak - 1.0).abs() < 1e-6);
    }

    #[test]
    fn truncated_tensor_is_rejected() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let path = dir.path().join(TENSOR_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, bytes).unwrap();
        let err = Dataset::read(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        assert!(err.to_string().contains("shape disagreement"));
    }

    #[test]
    fn position_count_mismatch_is_rejected() {
        let mut ds = tiny_dataset();
        ds.rirs.truncate(3);
        ds.split = Split {
            train: vec![0],
            validation: vec![1],
            evaluation: vec![2],
        };
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        // Rewrite the manifest to claim two positions over a three-position tensor.
        let path = dir.path().join(MANIFEST_FILE);
        let mut manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        manifest["num_positions"] = 2.into();
        manifest["positions"].as_array_mut().unwrap().pop();
        manifest["split"]["evaluation"] = serde_json::json!([]);
        fs::write(&path, manifest.to_string()).unwrap();
        let err = Dataset::read(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        ds.write(dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 7");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            Dataset::read(dir.path()),
            Err(Error::Format { .. })
        ));
    }
}
