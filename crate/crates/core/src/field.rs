//! Shared domain types: physical constants, coordinates, FOA impulse
//! responses, the target region and the measurement grid.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Number of first-order Ambisonic channels, ordered (W, X, Y, Z).
pub const FOA_CHANNELS: usize = 4;

/// Channel labels in storage order.
pub const CHANNEL_NAMES: [&str; FOA_CHANNELS] = ["W", "X", "Y", "Z"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// Speed of sound in m/s.
    pub c0: f64,
    /// Air density in kg/m^3.
    pub rho0: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            c0: 343.0,
            rho0: 1.2,
        }
    }
}

impl PhysicalConstants {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.c0.is_finite() && self.c0 > 0.0,
            "sound speed must be positive, got {}",
            self.c0
        );
        ensure!(
            self.rho0.is_finite() && self.rho0 > 0.0,
            "air density must be positive, got {}",
            self.rho0
        );
        Ok(())
    }
}

/// Cartesian position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Position) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// A four-channel (W, X, Y, Z) impulse response recorded at one position.
#[derive(Debug, Clone, PartialEq)]
pub struct FoaRir {
    pub position: Position,
    pub sample_rate: f64,
    /// Shape `[4, L]`, rows in (W, X, Y, Z) order.
    pub samples: Array2<f32>,
}

impl FoaRir {
    pub fn new(position: Position, sample_rate: f64, samples: Array2<f32>) -> Result<Self> {
        ensure!(position.is_finite(), "non-finite microphone position");
        ensure!(
            sample_rate.is_finite() && sample_rate > 0.0,
            "sample rate must be positive"
        );
        ensure!(
            samples.nrows() == FOA_CHANNELS,
            "expected {FOA_CHANNELS} channels, got {}",
            samples.nrows()
        );
        ensure!(samples.ncols() > 0, "impulse response has no samples");
        ensure!(
            samples.iter().all(|v| v.is_finite()),
            "impulse response contains non-finite samples"
        );
        Ok(Self {
            position,
            sample_rate,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.ncols() == 0
    }

    /// Time of sample `l` in seconds.
    pub fn time_of(&self, l: usize) -> f64 {
        l as f64 / self.sample_rate
    }
}

/// Axis-aligned cuboid of interest together with the time horizon `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetRegion {
    pub min_corner: Position,
    pub max_corner: Position,
    /// Time horizon in seconds.
    pub time_horizon: f64,
}

impl TargetRegion {
    pub fn new(min_corner: Position, max_corner: Position, time_horizon: f64) -> Result<Self> {
        let region = Self {
            min_corner,
            max_corner,
            time_horizon,
        };
        region.validate()?;
        Ok(region)
    }

    /// A cube with edge `edge` whose minimum corner sits at `min_corner`.
    pub fn cube(min_corner: Position, edge: f64, time_horizon: f64) -> Result<Self> {
        let max = Position::new(
            min_corner.x + edge,
            min_corner.y + edge,
            min_corner.z + edge,
        );
        Self::new(min_corner, max, time_horizon)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.min_corner.is_finite() && self.max_corner.is_finite(),
            "non-finite region corner"
        );
        let (lo, hi) = (self.min_corner.to_array(), self.max_corner.to_array());
        ensure!(
            lo.iter().zip(&hi).all(|(a, b)| a < b),
            "region min corner must be below max corner on every axis"
        );
        ensure!(
            self.time_horizon.is_finite() && self.time_horizon > 0.0,
            "time horizon must be positive"
        );
        Ok(())
    }

    pub fn edges(&self) -> [f64; 3] {
        [
            self.max_corner.x - self.min_corner.x,
            self.max_corner.y - self.min_corner.y,
            self.max_corner.z - self.min_corner.z,
        ]
    }

    pub fn center(&self) -> Position {
        Position::new(
            0.5 * (self.min_corner.x + self.max_corner.x),
            0.5 * (self.min_corner.y + self.max_corner.y),
            0.5 * (self.min_corner.z + self.max_corner.z),
        )
    }

    /// Inclusive containment with an absolute slack `tol` in meters.
    pub fn contains(&self, p: &Position, tol: f64) -> bool {
        let (lo, hi, q) = (
            self.min_corner.to_array(),
            self.max_corner.to_array(),
            p.to_array(),
        );
        (0..3).all(|i| q[i] >= lo[i] - tol && q[i] <= hi[i] + tol)
    }

    /// Space-time bounds as `[(lo, hi); 4]` over (x, y, z, t).
    pub fn space_time_bounds(&self) -> [(f64, f64); 4] {
        [
            (self.min_corner.x, self.max_corner.x),
            (self.min_corner.y, self.max_corner.y),
            (self.min_corner.z, self.max_corner.z),
            (0.0, self.time_horizon),
        ]
    }
}

/// Grid points along one axis of length `edge`.
fn axis_count(edge: f64, spacing: f64) -> Result<usize> {
    if spacing > edge {
        return Ok(1);
    }
    let steps = edge / spacing;
    let rounded = steps.round();
    ensure!(
        (steps - rounded).abs() <= 1e-6 * steps.max(1.0),
        "spacing {spacing} does not divide edge length {edge}"
    );
    Ok(rounded as usize + 1)
}

/// Enumerates grid positions over `region` with x varying fastest, then y, then z.
pub fn make_grid(region: &TargetRegion, spacing: f64) -> Result<Vec<Position>> {
    ensure!(
        spacing.is_finite() && spacing > 0.0,
        "grid spacing must be positive and finite, got {spacing}"
    );
    region.validate()?;
    let edges = region.edges();
    let lo = region.min_corner.to_array();
    let counts = [
        axis_count(edges[0], spacing)?,
        axis_count(edges[1], spacing)?,
        axis_count(edges[2], spacing)?,
    ];
    let coord = |axis: usize, i: usize| -> f64 {
        if counts[axis] == 1 {
            lo[axis]
        } else {
            lo[axis] + edges[axis] * i as f64 / (counts[axis] - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(counts.iter().product());
    for iz in 0..counts[2] {
        for iy in 0..counts[1] {
            for ix in 0..counts[0] {
                out.push(Position::new(coord(0, ix), coord(1, iy), coord(2, iz)));
            }
        }
    }
    Ok(out)
}

/// Disjoint train / validation / evaluation index lists over the grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub evaluation: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Validation,
    Evaluation,
}

impl Split {
    pub fn indices(&self, kind: SplitKind) -> &[usize] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Validation => &self.validation,
            SplitKind::Evaluation => &self.evaluation,
        }
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.evaluation.len()
    }

    /// Checks that the three lists are disjoint and cover `0..n_total`.
    pub fn validate(&self, n_total: usize) -> Result<()> {
        let mut seen = vec![false; n_total];
        for &i in self
            .train
            .iter()
            .chain(&self.validation)
            .chain(&self.evaluation)
        {
            ensure!(
                i < n_total,
                "split index {i} out of range for {n_total} positions"
            );
            ensure!(!seen[i], "split index {i} appears twice");
            seen[i] = true;
        }
        ensure!(
            seen.iter().all(|&s| s),
            "split does not cover all {n_total} positions"
        );
        Ok(())
    }
}

/// Uniform sampling without replacement; the evaluation set is the complement.
pub fn split_dataset(n_total: usize, n_train: usize, n_val: usize, seed: u64) -> Result<Split> {
    ensure!(
        n_train.checked_add(n_val).is_some_and(|n| n <= n_total),
        "requested {n_train} train + {n_val} validation positions out of {n_total}"
    );
    let mut order: Vec<usize> = (0..n_total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = order[..n_train].to_vec();
    let mut validation = order[n_train..n_train + n_val].to_vec();
    let mut evaluation = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    evaluation.sort_unstable();
    Ok(Split {
        train,
        validation,
        evaluation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_region() -> TargetRegion {
        TargetRegion::cube(Position::new(1.0, 2.0, 0.5), 1.0, 0.1).unwrap()
    }

    #[test]
    fn grid_counts() {
        assert_eq!(make_grid(&unit_region(), 0.05).unwrap().len(), 9261);
        assert_eq!(make_grid(&unit_region(), 1.0).unwrap().len(), 8);
        assert_eq!(make_grid(&unit_region(), 0.1).unwrap().len(), 1331);
        assert_eq!(make_grid(&unit_region(), 2.0).unwrap().len(), 1);
    }

    #[test]
    fn small_grid_corners_and_order() {
        let region = TargetRegion::cube(Position::new(-0.1, 0.0, 3.0), 0.2, 1.0).unwrap();
        let grid = make_grid(&region, 0.1).unwrap();
        assert_eq!(grid.len(), 27);
        assert_eq!(grid[0], region.min_corner);
        assert_eq!(grid[26], region.max_corner);
        // x varies fastest
        assert!((grid[1].x - 0.0).abs() < 1e-12 && grid[1].y == 0.0);
        assert!((grid[3].y - 0.1).abs() < 1e-12 && grid[3].x == -0.1);
        assert!((grid[9].z - 3.1).abs() < 1e-12);
    }

    #[test]
    fn grid_rejects_bad_spacing() {
        assert!(make_grid(&unit_region(), f64::NAN).is_err());
        assert!(make_grid(&unit_region(), 0.0).is_err());
        assert!(make_grid(&unit_region(), 0.3).is_err());
    }

    #[test]
    fn split_sizes() {
        let s = split_dataset(9261, 250, 50, 7).unwrap();
        assert_eq!(s.evaluation.len(), 8961);
        let s = split_dataset(9261, 500, 50, 7).unwrap();
        assert_eq!(s.evaluation.len(), 8711);
        s.validate(9261).unwrap();
        let s = split_dataset(10, 10, 0, 1).unwrap();
        assert!(s.evaluation.is_empty() && s.validation.is_empty());
        assert!(split_dataset(10, 8, 3, 1).is_err());
        assert!(split_dataset(10, usize::MAX, 3, 1).is_err());
    }

    #[test]
    fn split_determinism() {
        assert_eq!(
            split_dataset(1000, 100, 25, 3).unwrap(),
            split_dataset(1000, 100, 25, 3).unwrap()
        );
        assert_ne!(
            split_dataset(1000, 100, 25, 3).unwrap(),
            split_dataset(1000, 100, 25, 4).unwrap()
        );
    }

    #[test]
    fn split_validate_catches_overlap() {
        let bad = Split {
            train: vec![0, 1],
            validation: vec![1],
            evaluation: vec![2],
        };
        assert!(bad.validate(3).is_err());
        let missing = Split {
            train: vec![0],
            validation: vec![],
            evaluation: vec![2],
        };
        assert!(missing.validate(3).is_err());
    }

    #[test]
    fn rir_rejects_non_finite() {
        let mut samples = Array2::<f32>::zeros((4, 3));
        samples[[2, 1]] = f32::NAN;
        assert!(FoaRir::new(Position::default(), 8000.0, samples).is_err());
        assert!(FoaRir::new(Position::default(), 8000.0, Array2::zeros((3, 3))).is_err());
        assert!(FoaRir::new(Position::default(), 8000.0, Array2::zeros((4, 0))).is_err());
    }
}
