//! Horizontal slices of the W channel as binary PPM images plus CSV.
//!
//! Colormap: with `u = clamp(value / range, -1, 1)`, negative values fade
//! from white to blue as `(1 + u, 1 + u, 1)` and positive values fade from
//! white to red as `(1, 1 - u, 1 - u)`. Each component is scaled to 8 bits as
//! `round(255 * c)`. Zero therefore maps to white, `-range` to pure blue and
//! `+range` to pure red.
//!
//! Pixel `(col, row)` shows grid point `(ix, iy) = (col, n - 1 - row)` so that
//! +x points right and +y points up.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::field::{Position, TargetRegion};

/// Colormap value for `value` on a symmetric `range`.
pub fn diverging_rgb(value: f64, range: f64) -> [u8; 3] {
    let u = if range > 0.0 {
        (value / range).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    let c = if u < 0.0 {
        [1.0 + u, 1.0 + u, 1.0]
    } else {
        [1.0, 1.0 - u, 1.0 - u]
    };
    c.map(|v: f64| (255.0 * v).round() as u8)
}

/// One CSV row of a slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceRecord {
    pub ix: usize,
    pub iy: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub t: f64,
    pub value: f64,
    pub range: f64,
}

/// Values of one field on a square grid over a horizontal plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    /// Grid points per side.
    pub n: usize,
    pub z: f64,
    pub time: f64,
    /// Row-major values, `values[iy * n + ix]`.
    pub values: Vec<f64>,
    /// Grid coordinates along x and y.
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

/// Grid points of the plane at height `z` over the region, x fastest.
pub fn slice_points(
    region: &TargetRegion,
    z: f64,
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>, Vec<Position>)> {
    ensure!(n >= 2, "slice resolution must be at least 2");
    ensure!(
        z.is_finite() && z >= region.min_corner.z - 1e-9 && z <= region.max_corner.z + 1e-9,
        "slice height {z} m lies outside the region [{}, {}] m",
        region.min_corner.z,
        region.max_corner.z
    );
    let axis = |lo: f64, hi: f64| -> Vec<f64> {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    };
    let xs = axis(region.min_corner.x, region.max_corner.x);
    let ys = axis(region.min_corner.y, region.max_corner.y);
    let points = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| Position::new(x, y, z)))
        .collect();
    Ok((xs, ys, points))
}

impl Slice {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Binary P6 pixmap of the slice on the symmetric range `range`.
    pub fn to_ppm(&self, range: f64) -> Vec<u8> {
        let n = self.n;
        let mut out = format!("P6\n{n} {n}\n255\n").into_bytes();
        for row in 0..n {
            let iy = n - 1 - row;
            for ix in 0..n {
                out.extend(diverging_rgb(self.values[iy * n + ix], range));
            }
        }
        out
    }

    /// CSV with one row per grid point, including the range used for colors.
    pub fn to_csv(&self, range: f64) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for iy in 0..self.n {
            for ix in 0..self.n {
                w.serialize(SliceRecord {
                    ix,
                    iy,
                    x: self.xs[ix],
                    y: self.ys[iy],
                    z: self.z,
                    t: self.time,
                    value: self.values[iy * self.n + ix],
                    range,
                })
                .expect("write to memory");
            }
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
    }

    /// Writes `<stem>.ppm` and `<stem>.csv`.
    pub fn write(&self, stem: &Path, range: f64) -> Result<()> {
        if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let ppm = stem.with_extension("ppm");
        std::fs::write(&ppm, self.to_ppm(range)).map_err(|e| Error::io(&ppm, e))?;
        let csv = stem.with_extension("csv");
        std::fs::write(&csv, self.to_csv(range)).map_err(|e| Error::io(&csv, e))
    }
}

/// Parses a P6 pixmap written by [`Slice::to_ppm`] into `(width, height, rgb)`.
pub fn parse_ppm(bytes: &[u8]) -> Option<(usize, usize, Vec<[u8; 3]>)> {
    let text_end = bytes
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == b'\n')
        .nth(2)?
        .0;
    let header = std::str::from_utf8(&bytes[..text_end]).ok()?;
    let mut parts = header.split_whitespace();
    if parts.next()? != "P6" {
        return None;
    }
    let w: usize = parts.next()?.parse().ok()?;
    let h: usize = parts.next()?.parse().ok()?;
    if parts.next()? != "255" {
        return None;
    }
    let data = &bytes[text_end + 1..];
    if data.len() != w * h * 3 {
        return None;
    }
    Some((w, h, data.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()))
}
