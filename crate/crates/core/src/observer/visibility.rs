//! Self-occlusion reasoning for the vehicle model.
//!
//! Which keypoints and wireframe edges can be seen depends almost entirely on
//! the viewing direction, so visibility is tabulated once per model over a
//! ring of virtual viewpoints around the mean shape. Queries then reduce to a
//! bin lookup. The same ray test is exposed directly for callers that work
//! with a concrete placed mesh and camera instead of the tabulated ring.

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::mesh::MeshIndex;
use crate::shape_model::DeformableVehicleModel;
use crate::types::Side;

/// Distance from the model center to the virtual viewpoint ring.
pub const VIEW_RADIUS_M: f64 = 12.0;

/// Height of the virtual viewpoints above the ground plane.
pub const VIEW_HEIGHT_M: f64 = 1.65;

/// Targets are pulled this far toward the eye before the occlusion test so
/// points lying exactly on the surface do not shadow themselves.
pub const SURFACE_PULL_M: f64 = 0.02;

/// Sample count used to trace visible portions of a wireframe edge.
const EDGE_SAMPLES: usize = 24;

/// True when the open segment from `eye` to `target` (shortened by
/// [`SURFACE_PULL_M`]) misses every triangle in the index.
pub fn point_visible(index: &MeshIndex, eye: &Point3<f64>, target: &Point3<f64>) -> bool {
    let dir = target - eye;
    let len = dir.norm();
    if len <= SURFACE_PULL_M {
        return true;
    }
    !index.segment_hits(eye, &dir, 0.0, 1.0 - SURFACE_PULL_M / len)
}

/// Visible sub-interval of a wireframe edge, as fractions of its length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireSegment {
    /// Index into the side's edge list.
    pub edge: u32,
    pub t0: f64,
    pub t1: f64,
}

#[derive(Debug, Clone)]
struct LutBin {
    keypoints: Vec<bool>,
    wires: [Vec<WireSegment>; 4],
}

/// Per-viewpoint visibility of keypoints and wireframe edges, tabulated on
/// the mean shape over a full circle of azimuth bins.
///
/// The viewpoint azimuth follows the body frame: 0 degrees looks at the
/// front of the vehicle, 90 at its left side, 180 at the rear.
#[derive(Debug, Clone)]
pub struct VisibilityLut {
    resolution_deg: f64,
    bins: Vec<LutBin>,
}

impl VisibilityLut {
    /// Tabulates visibility for the model's mean shape at the given angular
    /// resolution (which must divide 360).
    pub fn build(model: &DeformableVehicleModel, resolution_deg: f64) -> Result<Self> {
        if resolution_deg <= 0.0 || (360.0 / resolution_deg).fract() != 0.0 {
            return Err(Error::InvalidConfig(format!(
                "visibility resolution {resolution_deg} does not divide 360",
            )));
        }
        let points = model.mean_points();
        let index = MeshIndex::build(model.surface_mesh(&[])?);
        let n_bins = (360.0 / resolution_deg) as usize;
        let mut bins = Vec::with_capacity(n_bins);
        for b in 0..n_bins {
            let theta = (b as f64 + 0.5) * resolution_deg.to_radians();
            let eye = Point3::new(
                VIEW_RADIUS_M * theta.cos(),
                VIEW_RADIUS_M * theta.sin(),
                VIEW_HEIGHT_M,
            );
            let keypoints = points
                .iter()
                .map(|p| point_visible(&index, &eye, p))
                .collect();
            let wires = std::array::from_fn(|side| {
                trace_edges(&index, &eye, &points, &model.topology.wireframe[side])
            });
            bins.push(LutBin { keypoints, wires });
        }
        Ok(VisibilityLut {
            resolution_deg,
            bins,
        })
    }

    pub fn bin_count(&self) -> usize {
        self.bins.len()
    }

    pub fn resolution_deg(&self) -> f64 {
        self.resolution_deg
    }

    /// Bin containing the given azimuth, wrapped into [0, 360).
    pub fn bin_of(&self, viewpoint_deg: f64) -> usize {
        let wrapped = viewpoint_deg.rem_euclid(360.0);
        ((wrapped / self.resolution_deg) as usize).min(self.bins.len() - 1)
    }

    /// Azimuth at the center of a bin, the angle its rays were cast from.
    pub fn bin_center_deg(&self, bin: usize) -> f64 {
        (bin as f64 + 0.5) * self.resolution_deg
    }

    pub fn keypoint_visible(&self, viewpoint_deg: f64, keypoint: usize) -> bool {
        self.bins[self.bin_of(viewpoint_deg)].keypoints[keypoint]
    }

    pub fn keypoints(&self, viewpoint_deg: f64) -> &[bool] {
        &self.bins[self.bin_of(viewpoint_deg)].keypoints
    }

    /// Visible portions of one side's wireframe edges.
    pub fn segments(&self, viewpoint_deg: f64, side: Side) -> &[WireSegment] {
        &self.bins[self.bin_of(viewpoint_deg)].wires[side.index()]
    }

    /// Sides with at least one visible wireframe segment.
    pub fn visible_sides(&self, viewpoint_deg: f64) -> Vec<Side> {
        Side::ALL
            .iter()
            .copied()
            .filter(|s| !self.segments(viewpoint_deg, *s).is_empty())
            .collect()
    }
}

/// Samples each edge at regular interior points and merges consecutive
/// visible samples into sub-intervals.
pub(crate) fn trace_edges(
    index: &MeshIndex,
    eye: &Point3<f64>,
    points: &[Point3<f64>],
    edges: &[[u32; 2]],
) -> Vec<WireSegment> {
    let mut out = Vec::new();
    for (e, &[a, b]) in edges.iter().enumerate() {
        let pa = points[a as usize];
        let pb = points[b as usize];
        let mut run: Option<(usize, usize)> = None;
        for s in 0..EDGE_SAMPLES {
            let t = (s as f64 + 0.5) / EDGE_SAMPLES as f64;
            let p = pa + (pb - pa) * t;
            if point_visible(index, eye, &p) {
                run = match run {
                    Some((start, _)) => Some((start, s)),
                    None => Some((s, s)),
                };
            } else if let Some((start, end)) = run.take() {
                out.push(segment(e, start, end));
            }
        }
        if let Some((start, end)) = run {
            out.push(segment(e, start, end));
        }
    }
    out
}

fn segment(edge: usize, first: usize, last: usize) -> WireSegment {
    WireSegment {
        edge: edge as u32,
        t0: first as f64 / EDGE_SAMPLES as f64,
        t1: (last as f64 + 1.0) / EDGE_SAMPLES as f64,
    }
}
