//! Browser bindings: draw a random shoebox room, render FOA impulse responses
//! inside its target region, and paint W-channel snapshots of the sound field.

use foa_pinn::field::Position;
use foa_pinn::ism::{enumerate_images, field_at, render_images, ImageSource, Scene, SceneSampler};
use foa_pinn::metrics::{nmse, pcc};
use foa_pinn::plot::{diverging_rgb, slice_points};
use ndarray::Array2;
use wasm_bindgen::prelude::*;

fn js_err(e: foa_pinn::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// A sampled room with its image sources enumerated once.
#[wasm_bindgen]
pub struct Room {
    scene: Scene,
    images: Vec<ImageSource>,
}

impl Room {
    pub fn create(seed: u64, duration: f64) -> foa_pinn::Result<Room> {
        let sampler = SceneSampler {
            duration,
            ..SceneSampler::default()
        };
        let scene = sampler.sample(seed)?;
        let images = enumerate_images(&scene)?;
        Ok(Room { scene, images })
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    /// Maps fractions of the region edges to a point in the region.
    fn point(&self, fx: f64, fy: f64, fz: f64) -> Position {
        let (lo, hi) = (self.scene.region.min_corner, self.scene.region.max_corner);
        let lerp = |a: f64, b: f64, f: f64| a + (b - a) * f.clamp(0.0, 1.0);
        Position::new(
            lerp(lo.x, hi.x, fx),
            lerp(lo.y, hi.y, fy),
            lerp(lo.z, hi.z, fz),
        )
    }

    fn response(&self, p: &Position) -> foa_pinn::Result<Array2<f64>> {
        render_images(
            &self.images,
            p,
            self.scene.sample_rate,
            self.scene.num_samples(),
            self.scene.constants.c0,
        )
    }

    /// W, X, Y and Z responses back to back for a point given as region fractions.
    pub fn rir_values(&self, fx: f64, fy: f64, fz: f64) -> foa_pinn::Result<Vec<f32>> {
        let r = self.response(&self.point(fx, fy, fz))?;
        Ok(r.iter().map(|&v| v as f32).collect())
    }

    /// W values on an `n` by `n` grid at height fraction `fz` and time `t`,
    /// row-major with x fastest, plus the peak magnitude.
    pub fn w_slice(&self, fz: f64, t: f64, n: usize) -> foa_pinn::Result<(Vec<f64>, f64)> {
        let z = self.point(0.0, 0.0, fz).z;
        let (_, _, points) = slice_points(&self.scene.region, z, n)?;
        let c = &self.scene;
        let values = points
            .iter()
            .map(|p| field_at(&self.images, p, t, c.sample_rate, c.constants.c0).map(|f| f[0]))
            .collect::<foa_pinn::Result<Vec<f64>>>()?;
        let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok((values, peak))
    }

    /// Per-channel NMSE (dB) and correlation between the responses at two points.
    pub fn compare_points(&self, a: [f64; 3], b: [f64; 3]) -> foa_pinn::Result<Vec<f64>> {
        let ra = self.response(&self.point(a[0], a[1], a[2]))?;
        let rb = self.response(&self.point(b[0], b[1], b[2]))?;
        let mut out = Vec::with_capacity(8);
        for ch in 0..4 {
            let r = ra.slice(ndarray::s![ch..ch + 1, ..]);
            let p = rb.slice(ndarray::s![ch..ch + 1, ..]);
            out.push(nmse(r, p).unwrap_or(f64::NAN));
            out.push(pcc(r, p).map(|c| c.mean).unwrap_or(f64::NAN));
        }
        Ok(out)
    }
}

#[wasm_bindgen]
impl Room {
    /// Samples room `seed` with responses `duration` seconds long.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, duration: f64) -> Result<Room, JsValue> {
        Room::create(seed as u64, duration).map_err(js_err)
    }

    /// `[Lx, Ly, Lz, sx, sy, sz, x0, y0, z0, x1, y1, z1, sample_rate, images]`.
    pub fn summary(&self) -> Vec<f64> {
        let s = &self.scene;
        let (lo, hi) = (s.region.min_corner, s.region.max_corner);
        let mut out = s.room_dims.to_vec();
        out.extend([s.source.x, s.source.y, s.source.z]);
        out.extend([lo.x, lo.y, lo.z, hi.x, hi.y, hi.z]);
        out.extend([s.sample_rate, self.images.len() as f64]);
        out
    }

    /// Four channels of `num_samples` each, W first.
    pub fn rir(&self, fx: f64, fy: f64, fz: f64) -> Result<Vec<f32>, JsValue> {
        self.rir_values(fx, fy, fz).map_err(js_err)
    }

    /// RGBA pixels of the W field at time `t`, +y up, colored on its own peak.
    pub fn slice_rgba(&self, fz: f64, t: f64, n: usize) -> Result<Vec<u8>, JsValue> {
        let (values, peak) = self.w_slice(fz, t, n).map_err(js_err)?;
        let mut out = Vec::with_capacity(4 * n * n);
        for row in 0..n {
            let iy = n - 1 - row;
            for ix in 0..n {
                out.extend(diverging_rgb(values[iy * n + ix], peak));
                out.push(255);
            }
        }
        Ok(out)
    }

    /// `[nmse_w, pcc_w, nmse_x, pcc_x, ...]` of point b's response against point a's.
    pub fn compare(
        &self,
        ax: f64,
        ay: f64,
        az: f64,
        bx: f64,
        by: f64,
        bz: f64,
    ) -> Result<Vec<f64>, JsValue> {
        self.compare_points([ax, ay, az], [bx, by, bz])
            .map_err(js_err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rir_matches_direct_render() {
        let room = Room::create(3, 0.02).unwrap();
        let v = room.rir_values(0.5, 0.5, 0.5).unwrap();
        let n = room.scene().num_samples();
        assert_eq!(v.len(), 4 * n);
        let center = room.scene().region.center();
        let direct = foa_pinn::ism::render_foa_rir(room.scene(), center).unwrap();
        for (a, b) in v.iter().zip(direct.samples.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn slice_shape_and_colors() {
        let room = Room::create(3, 0.02).unwrap();
        let (values, peak) = room.w_slice(0.5, 0.01, 8).unwrap();
        assert_eq!(values.len(), 64);
        assert!(peak > 0.0);
        let rgba = room.slice_rgba(0.5, 0.01, 8).unwrap();
        assert_eq!(rgba.len(), 4 * 64);
        assert!(rgba.chunks(4).all(|p| p[3] == 255));
        // The largest value is drawn as a saturated color.
        let saturated = rgba
            .chunks(4)
            .any(|p| p[..3] == [255, 0, 0] || p[..3] == [0, 0, 255]);
        assert!(saturated);
    }

    #[test]
    fn comparing_a_point_with_itself_is_perfect() {
        let room = Room::create(5, 0.02).unwrap();
        let m = room
            .compare_points([0.2, 0.3, 0.4], [0.2, 0.3, 0.4])
            .unwrap();
        assert_eq!(m[0], foa_pinn::metrics::NMSE_FLOOR_DB);
        assert!((m[1] - 1.0).abs() < 1e-12);
        let far = room
            .compare_points([0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
            .unwrap();
        assert!(far[0] > -20.0);
    }

    #[test]
    fn bad_duration_is_an_error() {
        assert!(Room::create(1, -1.0).is_err());
    }
}
