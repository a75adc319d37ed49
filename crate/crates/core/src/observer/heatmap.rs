//! Single-channel response maps over a fixed-size detection crop, plus the
//! detection boxes that map between full-image and crop coordinates.
//!
//! A heatmap stores one `f32` value per pixel, kept in `[0, 1]`. Continuous
//! coordinates follow the usual raster convention: pixel `(i, j)` covers the
//! unit square `[i, i+1) x [j, j+1)` and its center sits at `(i+0.5, j+0.5)`.

use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use nalgebra::Point3;

use crate::error::{Error, Result};

/// Side length of the square detection crop all heatmaps are rendered in.
pub const CROP_SIZE: u32 = 224;

const HEATMAP_MAGIC: &[u8; 4] = b"HMAP";

/// Highest value a heatmap sample may report; keeps `log(1 - h)` finite.
pub const MAX_SAMPLE: f64 = 1.0 - 1e-6;

/// Dense single-channel response map with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl Heatmap {
    pub fn zeros(width: u32, height: u32) -> Self {
        Heatmap {
            width,
            height,
            data: vec![0.0; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: f32) {
        self.data[y as usize * self.width as usize + x as usize] = value.clamp(0.0, 1.0);
    }

    /// Sum of all pixel values.
    pub fn total(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// Pixel coordinates of the largest value (first hit on ties).
    pub fn argmax(&self) -> (u32, u32) {
        let mut best = (0u32, 0u32);
        let mut best_v = f32::NEG_INFINITY;
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(x, y);
                if v > best_v {
                    best_v = v;
                    best = (x, y);
                }
            }
        }
        best
    }

    /// Bilinear sample at continuous coordinates, interpolating between the
    /// four nearest pixel centers. Outside the raster the map reads zero.
    /// The result is clamped below 1 so `log(1 - h)` stays finite.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        if self.width == 0 || self.height == 0 {
            return 0.0;
        }
        if x < 0.0 || y < 0.0 || x > self.width as f64 || y > self.height as f64 {
            return 0.0;
        }
        // Shift so integer coordinates land on pixel centers.
        let gx = x - 0.5;
        let gy = y - 0.5;
        let x0 = gx.floor();
        let y0 = gy.floor();
        let fx = gx - x0;
        let fy = gy - y0;
        let fetch = |ix: i64, iy: i64| -> f64 {
            if ix < 0 || iy < 0 || ix >= self.width as i64 || iy >= self.height as i64 {
                0.0
            } else {
                self.get(ix as u32, iy as u32) as f64
            }
        };
        let x0 = x0 as i64;
        let y0 = y0 as i64;
        let v = fetch(x0, y0) * (1.0 - fx) * (1.0 - fy)
            + fetch(x0 + 1, y0) * fx * (1.0 - fy)
            + fetch(x0, y0 + 1) * (1.0 - fx) * fy
            + fetch(x0 + 1, y0 + 1) * fx * fy;
        v.min(MAX_SAMPLE)
    }

    /// Max-blends an isotropic Gaussian blob centered at `(cx, cy)` in
    /// continuous coordinates. Existing larger values win, so overlapping
    /// blobs never push a pixel above `peak`.
    pub fn splat_gaussian(&mut self, cx: f64, cy: f64, sigma: f64, peak: f64) {
        if sigma <= 0.0 {
            return;
        }
        let radius = (4.0 * sigma).ceil();
        let x_lo = ((cx - radius).floor().max(0.0)) as i64;
        let y_lo = ((cy - radius).floor().max(0.0)) as i64;
        let x_hi = ((cx + radius).ceil() as i64).min(self.width as i64);
        let y_hi = ((cy + radius).ceil() as i64).min(self.height as i64);
        let inv = 1.0 / (2.0 * sigma * sigma);
        for y in y_lo.max(0)..y_hi {
            for x in x_lo.max(0)..x_hi {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                let v = (peak * (-(dx * dx + dy * dy) * inv).exp()) as f32;
                let idx = y as usize * self.width as usize + x as usize;
                if v > self.data[idx] {
                    self.data[idx] = v.clamp(0.0, 1.0);
                }
            }
        }
    }
}

/// Writes a stack of equally sized heatmaps as a little-endian binary file:
/// magic `HMAP`, then `u32` width, height and channel count, then each
/// channel as row-major `f32` values.
pub fn write_heatmaps(path: &Path, maps: &[Heatmap]) -> Result<()> {
    let bytes = heatmaps_to_bytes(maps)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn read_heatmaps(path: &Path) -> Result<Vec<Heatmap>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    heatmaps_from_bytes(&bytes)
}

pub fn heatmaps_to_bytes(maps: &[Heatmap]) -> Result<Vec<u8>> {
    let (w, h) = match maps.first() {
        Some(m) => (m.width, m.height),
        None => (0, 0),
    };
    if maps.iter().any(|m| m.width != w || m.height != h) {
        return Err(Error::format(
            "heatmap",
            "all channels in a stack must share dimensions",
        ));
    }
    let mut out = Vec::with_capacity(16 + maps.len() * w as usize * h as usize * 4);
    out.extend_from_slice(HEATMAP_MAGIC);
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&(maps.len() as u32).to_le_bytes());
    for m in maps {
        for v in &m.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn heatmaps_from_bytes(bytes: &[u8]) -> Result<Vec<Heatmap>> {
    let err = |msg: &str| Error::format("heatmap", msg.to_string());
    if bytes.len() < 16 {
        return Err(err("file shorter than the fixed header"));
    }
    if &bytes[..4] != HEATMAP_MAGIC {
        return Err(err("bad magic, expected HMAP"));
    }
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let width = u32_at(4);
    let height = u32_at(8);
    let channels = u32_at(12);
    let plane = width as usize * height as usize;
    let expect = 16usize
        .checked_add(plane.checked_mul(channels as usize * 4).ok_or_else(|| {
            err("channel dimensions overflow")
        })?)
        .ok_or_else(|| err("channel dimensions overflow"))?;
    if bytes.len() != expect {
        return Err(err("payload length does not match the header"));
    }
    let mut maps = Vec::with_capacity(channels as usize);
    let mut off = 16;
    for _ in 0..channels {
        let mut data = Vec::with_capacity(plane);
        for _ in 0..plane {
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(err("heatmap values must be finite and in [0, 1]"));
            }
            data.push(v);
            off += 4;
        }
        maps.push(Heatmap {
            width,
            height,
            data,
        });
    }
    Ok(maps)
}

/// Axis-aligned detection box in full-image pixel coordinates. Boxes are
/// squared and padded so the crop mapping is isotropic: one crop pixel
/// covers the same image distance in x and y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl DetectionBox {
    /// Tight bounds of projected points, grown by `pad` (fraction of the
    /// larger side) and expanded to a square. `None` when no point projects.
    pub fn around(points: &[(f64, f64)], pad: f64) -> Option<Self> {
        let mut x0 = f64::INFINITY;
        let mut y0 = f64::INFINITY;
        let mut x1 = f64::NEG_INFINITY;
        let mut y1 = f64::NEG_INFINITY;
        for &(u, v) in points {
            x0 = x0.min(u);
            y0 = y0.min(v);
            x1 = x1.max(u);
            y1 = y1.max(v);
        }
        if !(x0.is_finite() && y0.is_finite() && x1 > x0 && y1 > y0) {
            return None;
        }
        let side = (x1 - x0).max(y1 - y0) * (1.0 + 2.0 * pad);
        let cx = 0.5 * (x0 + x1);
        let cy = 0.5 * (y0 + y1);
        Some(DetectionBox {
            x0: cx - 0.5 * side,
            y0: cy - 0.5 * side,
            x1: cx + 0.5 * side,
            y1: cy + 0.5 * side,
        })
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.x0 && u <= self.x1 && v >= self.y0 && v <= self.y1
    }

    /// Image pixels per crop pixel along x.
    pub fn scale_x(&self) -> f64 {
        self.width() / CROP_SIZE as f64
    }

    /// Image pixels per crop pixel along y.
    pub fn scale_y(&self) -> f64 {
        self.height() / CROP_SIZE as f64
    }

    /// Full-image coordinates to continuous crop coordinates.
    pub fn to_crop(&self, u: f64, v: f64) -> (f64, f64) {
        (
            (u - self.x0) / self.scale_x(),
            (v - self.y0) / self.scale_y(),
        )
    }

    /// Continuous crop coordinates back to full-image coordinates.
    pub fn to_image(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.x0 + x * self.scale_x(),
            self.y0 + y * self.scale_y(),
        )
    }

    /// Intersection with the image rectangle; `None` when nothing remains.
    /// The result may no longer be square.
    pub fn clamped(&self, width: u32, height: u32) -> Option<DetectionBox> {
        let b = DetectionBox {
            x0: self.x0.max(0.0),
            y0: self.y0.max(0.0),
            x1: self.x1.min(width as f64),
            y1: self.y1.min(height as f64),
        };
        (b.x1 > b.x0 && b.y1 > b.y0).then_some(b)
    }
}

/// Projects camera-frame points with `project`, keeping only those in front
/// of the camera.
pub fn projections<F>(points: &[Point3<f64>], project: F) -> Vec<(f64, f64)>
where
    F: Fn(&Point3<f64>) -> Option<(f64, f64)>,
{
    points.iter().filter_map(project).collect()
}
