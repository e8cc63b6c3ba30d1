//! Image-source simulation of shoebox rooms with first-order Ambisonic
//! encoding of every arrival.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::field::{FoaRir, PhysicalConstants, Position, TargetRegion, FOA_CHANNELS};

/// Half-width of the fractional-delay kernel in samples; `|x| < 40.5` admits 81 taps.
pub const KERNEL_HALF_WIDTH: f64 = 40.5;

/// Arrivals closer than this to the microphone are rejected.
pub const MIN_IMAGE_DISTANCE: f64 = 1e-3;

/// Wall order used by [`Scene::wall_absorption`].
pub const WALL_NAMES: [&str; 6] = ["x=0", "x=Lx", "y=0", "y=Ly", "z=0", "z=Lz"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// Room extent (Lx, Ly, Lz) in meters; the room spans `[0, L]` on each axis.
    pub room_dims: [f64; 3],
    pub source: Position,
    pub region: TargetRegion,
    /// Energy absorption per wall, ordered as [`WALL_NAMES`].
    pub wall_absorption: [f64; 6],
    pub max_reflection_order: usize,
    pub sample_rate: f64,
    pub duration: f64,
    #[serde(default)]
    pub constants: PhysicalConstants,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        ensure!(
            self.room_dims.iter().all(|l| l.is_finite() && *l > 0.0),
            "room dimensions must be positive"
        );
        ensure!(self.source.is_finite(), "non-finite source position");
        let inside_room = |p: &Position, strict: bool| {
            p.to_array().iter().zip(&self.room_dims).all(|(&c, &l)| {
                if strict {
                    c > 0.0 && c < l
                } else {
                    c >= 0.0 && c <= l
                }
            })
        };
        ensure!(
            inside_room(&self.source, true),
            "source lies outside the room"
        );
        self.region.validate()?;
        ensure!(
            inside_room(&self.region.min_corner, true)
                && inside_room(&self.region.max_corner, true),
            "target region must lie strictly inside the room"
        );
        ensure!(
            !self.region.contains(&self.source, 0.0),
            "source lies inside the target region"
        );
        ensure!(
            self.wall_absorption
                .iter()
                .all(|a| a.is_finite() && (0.0..1.0).contains(a)),
            "wall absorption must lie in [0, 1)"
        );
        ensure!(
            self.sample_rate.is_finite() && self.sample_rate > 0.0,
            "sample rate must be positive"
        );
        ensure!(
            self.duration.is_finite() && self.duration > 0.0,
            "duration must be positive"
        );
        Ok(())
    }

    /// Number of samples per rendered channel.
    pub fn num_samples(&self) -> usize {
        ((self.duration * self.sample_rate).round() as usize).max(1)
    }

    /// Pressure reflection coefficient `sqrt(1 - absorption)` per wall.
    pub fn reflection_coefficients(&self) -> [f64; 6] {
        self.wall_absorption.map(|a| (1.0 - a).sqrt())
    }
}

/// Smallest reflection order that includes every arrival reaching the
/// microphone (kernel tail included) before `duration` elapses.
pub fn default_max_order(room_dims: [f64; 3], c0: f64, sample_rate: f64, duration: f64) -> usize {
    let reach = c0 * (duration + KERNEL_HALF_WIDTH / sample_rate);
    let l_min = room_dims.iter().cloned().fold(f64::INFINITY, f64::min);
    // An image with unfolded lattice indices n lies at least
    // L_min * (|n|_1 - 3) / sqrt(3) away from any point in the room.
    (3f64.sqrt() * reach / l_min).ceil() as usize + 2
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSource {
    pub position: Position,
    /// Product of wall reflection coefficients along the path.
    pub amplitude: f64,
    pub order: usize,
}

/// Image positions and reflection counts for one axis.
///
/// Index `(n, q)` places the image at `(1 - 2q) s + 2 n L`; it has bounced
/// `|n - q|` times off the wall at 0 and `|n|` times off the wall at `L`.
fn axis_images(source: f64, length: f64, max_order: usize) -> Vec<(f64, usize, usize)> {
    let n_max = max_order as i64;
    let mut out = Vec::new();
    for n in -n_max..=n_max {
        for q in 0..=1i64 {
            let low = (n - q).unsigned_abs() as usize;
            let high = n.unsigned_abs() as usize;
            if low + high > max_order {
                continue;
            }
            let coord = (1 - 2 * q) as f64 * source + 2.0 * n as f64 * length;
            out.push((coord, low, high));
        }
    }
    out
}

/// Every image source of total reflection order up to the scene maximum.
pub fn enumerate_images(scene: &Scene) -> Result<Vec<ImageSource>> {
    scene.validate()?;
    let beta = scene.reflection_coefficients();
    let n = scene.max_reflection_order;
    let src = scene.source.to_array();
    let axes: Vec<Vec<(f64, usize, usize)>> = (0..3)
        .map(|a| axis_images(src[a], scene.room_dims[a], n))
        .collect();
    let mut images = Vec::new();
    for &(x, x0, x1) in &axes[0] {
        let ox = x0 + x1;
        for &(y, y0, y1) in &axes[1] {
            let oxy = ox + y0 + y1;
            if oxy > n {
                continue;
            }
            for &(z, z0, z1) in &axes[2] {
                let order = oxy + z0 + z1;
                if order > n {
                    continue;
                }
                let amplitude = beta[0].powi(x0 as i32)
                    * beta[1].powi(x1 as i32)
                    * beta[2].powi(y0 as i32)
                    * beta[3].powi(y1 as i32)
                    * beta[4].powi(z0 as i32)
                    * beta[5].powi(z1 as i32);
                images.push(ImageSource {
                    position: Position::new(x, y, z),
                    amplitude,
                    order,
                });
            }
        }
    }
    Ok(images)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Hann-windowed sinc interpolation kernel evaluated at offset `x` samples.
pub fn fractional_delay_kernel(x: f64) -> f64 {
    if x.abs() >= KERNEL_HALF_WIDTH {
        return 0.0;
    }
    sinc(x) * 0.5 * (1.0 + (PI * x / KERNEL_HALF_WIDTH).cos())
}

/// Gain, delay in seconds, and unit vector from `mic` toward `image`.
fn arrival(image: &ImageSource, mic: &Position) -> Result<(f64, f64, [f64; 3])> {
    let d = image.position.distance(mic);
    if d < MIN_IMAGE_DISTANCE {
        return Err(Error::DegenerateDistance { distance: d });
    }
    let u = [
        (image.position.x - mic.x) / d,
        (image.position.y - mic.y) / d,
        (image.position.z - mic.z) / d,
    ];
    Ok((image.amplitude / (4.0 * PI * d), d, u))
}

/// Renders `num_samples` samples of the FOA response from an explicit image set.
pub fn render_images(
    images: &[ImageSource],
    mic: &Position,
    sample_rate: f64,
    num_samples: usize,
    c0: f64,
) -> Result<Array2<f64>> {
    let mut out = Array2::<f64>::zeros((FOA_CHANNELS, num_samples));
    for image in images {
        let (gain, d, u) = arrival(image, mic)?;
        let delay = sample_rate * d / c0;
        if delay - KERNEL_HALF_WIDTH >= num_samples as f64 {
            continue;
        }
        let first = (delay - KERNEL_HALF_WIDTH).ceil().max(0.0) as usize;
        let last = ((delay + KERNEL_HALF_WIDTH).floor() as usize).min(num_samples - 1);
        for n in first..=last {
            let k = gain * fractional_delay_kernel(n as f64 - delay);
            out[[0, n]] += k;
            out[[1, n]] += u[0] * k;
            out[[2, n]] += u[1] * k;
            out[[3, n]] += u[2] * k;
        }
    }
    Ok(out)
}

/// Continuous-time FOA field `(w, x, y, z)` at `mic` and time `t` seconds.
pub fn field_at(
    images: &[ImageSource],
    mic: &Position,
    t: f64,
    sample_rate: f64,
    c0: f64,
) -> Result<[f64; 4]> {
    let mut out = [0.0; 4];
    for image in images {
        let (gain, d, u) = arrival(image, mic)?;
        let k = gain * fractional_delay_kernel(sample_rate * (t - d / c0));
        if k != 0.0 {
            out[0] += k;
            out[1] += u[0] * k;
            out[2] += u[1] * k;
            out[3] += u[2] * k;
        }
    }
    Ok(out)
}

/// Renders the FOA response of `scene` at one microphone position.
pub fn render_foa_rir(scene: &Scene, mic: Position) -> Result<FoaRir> {
    let images = enumerate_images(scene)?;
    render_with_images(scene, &images, mic)
}

fn render_with_images(scene: &Scene, images: &[ImageSource], mic: Position) -> Result<FoaRir> {
    ensure!(
        scene.region.contains(&mic, 1e-9),
        "microphone at ({}, {}, {}) lies outside the target region",
        mic.x,
        mic.y,
        mic.z
    );
    let samples = render_images(
        images,
        &mic,
        scene.sample_rate,
        scene.num_samples(),
        scene.constants.c0,
    )?;
    FoaRir::new(mic, scene.sample_rate, samples.mapv(|v| v as f32))
}

/// Renders every microphone position in parallel, sharing one image set.
pub fn render_grid(scene: &Scene, mics: &[Position]) -> Result<Vec<FoaRir>> {
    let images = enumerate_images(scene)?;
    mics.par_iter()
        .map(|&mic| render_with_images(scene, &images, mic))
        .collect()
}

/// Distribution used to draw random shoebox scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSampler {
    pub floor_range: (f64, f64),
    pub height_range: (f64, f64),
    /// Minimum distance between the walls and both the source and the region.
    pub wall_margin: f64,
    pub region_edge: f64,
    /// Minimum distance between the source and the target region.
    pub source_clearance: f64,
    pub absorption_range: (f64, f64),
    pub sample_rate: f64,
    pub duration: f64,
    pub constants: PhysicalConstants,
    /// Overrides [`default_max_order`] when set.
    pub max_reflection_order: Option<usize>,
    pub max_attempts: usize,
}

impl Default for SceneSampler {
    fn default() -> Self {
        Self {
            floor_range: (4.0, 8.0),
            height_range: (2.5, 4.0),
            wall_margin: 0.5,
            region_edge: 1.0,
            source_clearance: 0.5,
            absorption_range: (0.2, 0.6),
            sample_rate: 8000.0,
            duration: 0.1,
            constants: PhysicalConstants::default(),
            max_reflection_order: None,
            max_attempts: 1000,
        }
    }
}

fn box_distance(p: &Position, region: &TargetRegion) -> f64 {
    let (lo, hi, q) = (
        region.min_corner.to_array(),
        region.max_corner.to_array(),
        p.to_array(),
    );
    (0..3)
        .map(|i| (lo[i] - q[i]).max(q[i] - hi[i]).max(0.0).powi(2))
        .sum::<f64>()
        .sqrt()
}

impl SceneSampler {
    pub fn sample(&self, seed: u64) -> Result<Scene> {
        ensure!(
            self.floor_range.0 > 0.0 && self.floor_range.0 <= self.floor_range.1,
            "invalid floor range"
        );
        ensure!(
            self.height_range.0 > 0.0 && self.height_range.0 <= self.height_range.1,
            "invalid height range"
        );
        ensure!(
            self.absorption_range.0 >= 0.0
                && self.absorption_range.0 <= self.absorption_range.1
                && self.absorption_range.1 < 1.0,
            "invalid absorption range"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |lo: f64, hi: f64| {
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        };
        let room_dims = [
            uniform(self.floor_range.0, self.floor_range.1),
            uniform(self.floor_range.0, self.floor_range.1),
            uniform(self.height_range.0, self.height_range.1),
        ];
        let margin = self.wall_margin;
        ensure!(
            room_dims
                .iter()
                .all(|&l| l > 2.0 * margin + self.region_edge),
            "room too small for a {} m region with {} m wall margin",
            self.region_edge,
            margin
        );
        let corner: Vec<f64> = room_dims
            .iter()
            .map(|&l| uniform(margin, l - margin - self.region_edge))
            .collect();
        let region = TargetRegion::cube(
            Position::new(corner[0], corner[1], corner[2]),
            self.region_edge,
            self.duration,
        )?;
        let wall_absorption =
            [(); 6].map(|_| uniform(self.absorption_range.0, self.absorption_range.1));
        let mut source = None;
        for _ in 0..self.max_attempts {
            let candidate = Position::new(
                uniform(margin, room_dims[0] - margin),
                uniform(margin, room_dims[1] - margin),
                uniform(margin, room_dims[2] - margin),
            );
            if box_distance(&candidate, &region) >= self.source_clearance
                && !region.contains(&candidate, 0.0)
            {
                source = Some(candidate);
                break;
            }
        }
        let source = source.ok_or(Error::SceneGeneration {
            attempts: self.max_attempts,
        })?;
        let max_reflection_order = self.max_reflection_order.unwrap_or_else(|| {
            default_max_order(
                room_dims,
                self.constants.c0,
                self.sample_rate,
                self.duration,
            )
        });
        let scene = Scene {
            room_dims,
            source,
            region,
            wall_absorption,
            max_reflection_order,
            sample_rate: self.sample_rate,
            duration: self.duration,
            constants: self.constants,
        };
        scene.validate()?;
        Ok(scene)
    }
}

/// Draws a scene from the default distribution.
pub fn sample_random_scene(seed: u64) -> Result<Scene> {
    SceneSampler::default().sample(seed)
}
