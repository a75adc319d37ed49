//! Stereo scene geometry.
//!
//! Camera coordinates follow the usual left-camera convention: x to the
//! right, y down, z along the viewing direction, origin at the left
//! projection centre. The rectified right camera sits at `(baseline, 0, 0)`.

mod grid;
mod io;
mod plane;

pub use grid::{FreeSpaceGrid, GridExtent, DEFAULT_CELL_SIZE_M};
pub use io::{PointLabel, SceneData};
pub use plane::{fit_ground_plane, GroundPlane, PlaneFrame, RansacParams};

use nalgebra::Point3;

use crate::error::{Error, Result};

/// Rectified stereo rig intrinsics shared by both cameras.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRig {
    pub focal_px: f64,
    pub cx: f64,
    pub cy: f64,
    pub baseline_m: f64,
    pub width: u32,
    pub height: u32,
}

impl StereoRig {
    /// A street-scene rig: 721 px focal length, 0.54 m baseline.
    pub fn street_default() -> Self {
        StereoRig {
            focal_px: 721.0,
            cx: 609.5,
            cy: 172.8,
            baseline_m: 0.54,
            width: 1242,
            height: 375,
        }
    }

    /// Reconstructs the 3D point for a left-image pixel and its disparity.
    pub fn triangulate(&self, u: f64, v: f64, disparity_px: f64) -> Result<Point3<f64>> {
        if disparity_px <= 0.0 {
            return Err(Error::NonPositiveDisparity);
        }
        let z = self.focal_px * self.baseline_m / disparity_px;
        let x = (u - self.cx) * z / self.focal_px;
        let y = (v - self.cy) * z / self.focal_px;
        Ok(Point3::new(x, y, z))
    }

    /// Depth uncertainty of a reconstructed point at depth `z` for a
    /// disparity uncertainty `sigma_disp_px`: grows quadratically with depth.
    pub fn depth_sigma(&self, z: f64, sigma_disp_px: f64) -> Result<f64> {
        if z <= 0.0 {
            return Err(Error::NonPositiveDepth);
        }
        Ok(z * z * sigma_disp_px / (self.focal_px * self.baseline_m))
    }

    pub fn disparity_at(&self, z: f64) -> f64 {
        self.focal_px * self.baseline_m / z
    }

    /// Projects into the left image; `None` behind the camera.
    pub fn project_left(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((
            self.focal_px * p.x / p.z + self.cx,
            self.focal_px * p.y / p.z + self.cy,
        ))
    }

    /// Projects into the right image of the rectified pair.
    pub fn project_right(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((
            self.focal_px * (p.x - self.baseline_m) / p.z + self.cx,
            self.focal_px * p.y / p.z + self.cy,
        ))
    }

    pub fn in_image(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }
}
