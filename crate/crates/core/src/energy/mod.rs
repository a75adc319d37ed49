//! Factorised fitting energy over vehicle pose and shape.
//!
//! The energy of a state is a weighted sum of independent terms: stereo
//! surface points against the model surface, keypoint and wireframe image
//! responses, free-space context on the ground plane, an orientation
//! likelihood and a shape prior. Model variants switch individual terms on
//! and off so that their contributions can be compared on equal footing;
//! disabled terms report exactly zero.

pub mod clip;

use std::fmt;
use std::str::FromStr;

use nalgebra::{Point3, Vector2};

use crate::error::{Error, Result};
use crate::mesh::{MeshIndex, SurfaceMesh};
use crate::observer::{viewpoint_deg, ObservationBundle, ViewpointDistribution, VisibilityLut, CROP_SIZE};
use crate::scene::{FreeSpaceGrid, PlaneFrame, StereoRig};
use crate::shape_model::{place, DeformableVehicleModel};
use crate::types::{Side, VehicleState, VehicleType};

/// Which energy terms take part in the fit.
///
/// Every variant keeps the stereo point term and a shape prior. The letters
/// name the extras: S replaces the zero-mean shape prior with the
/// subcategory-aware one, P adds ground-plane free-space context, O the
/// orientation likelihood, K the keypoint responses and W the wireframe
/// responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelVariant {
    Base,
    BaseS,
    BaseSPO,
    BaseKW,
    Full,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 5] = [
        ModelVariant::Base,
        ModelVariant::BaseS,
        ModelVariant::BaseSPO,
        ModelVariant::BaseKW,
        ModelVariant::Full,
    ];

    pub fn uses_keypoints(self) -> bool {
        matches!(self, ModelVariant::BaseKW | ModelVariant::Full)
    }

    pub fn uses_wireframe(self) -> bool {
        matches!(self, ModelVariant::BaseKW | ModelVariant::Full)
    }

    pub fn uses_position(self) -> bool {
        matches!(self, ModelVariant::BaseSPO | ModelVariant::Full)
    }

    pub fn uses_orientation(self) -> bool {
        matches!(self, ModelVariant::BaseSPO | ModelVariant::Full)
    }

    /// True when the shape prior pulls towards the subcategory means
    /// instead of the overall mean shape.
    pub fn subcategory_shape_prior(self) -> bool {
        matches!(
            self,
            ModelVariant::BaseS | ModelVariant::BaseSPO | ModelVariant::Full
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Base => "base",
            ModelVariant::BaseS => "base-s",
            ModelVariant::BaseSPO => "base-s-p-o",
            ModelVariant::BaseKW => "base-k-w",
            ModelVariant::Full => "full",
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelVariant::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::format("model variant", format!("unknown variant `{s}`")))
    }
}

/// Tuning knobs of the energy. The defaults match the synthetic observer.
#[derive(Debug, Clone, Copy)]
pub struct EnergyParams {
    /// Disparity noise assumed when weighting stereo points by depth.
    pub sigma_disp_px: f64,
    /// Model uncertainty in metres; sets the blur of rendered wireframes.
    pub sigma_model_m: f64,
    /// Reference cell edge in metres for the free-space weight.
    pub context_cell_m: f64,
    pub w_points: f64,
    pub w_keypoints: f64,
    pub w_wireframe: f64,
    pub w_position: f64,
    pub w_orientation: f64,
    pub w_shape: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            sigma_disp_px: 1.0,
            sigma_model_m: 0.10,
            context_cell_m: 0.25,
            w_points: 1.0,
            w_keypoints: 1.0,
            w_wireframe: 1.0,
            w_position: 1.0,
            w_orientation: 1.0,
            w_shape: 1.0,
        }
    }
}

/// Energy of one state, split by term. `total` is the exact sum of the six
/// term fields; terms disabled by the variant are exactly zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    /// Stereo point term, non-negative.
    pub points: f64,
    /// Keypoint response reward, non-positive.
    pub keypoints: f64,
    /// Wireframe response reward, non-positive.
    pub wireframe: f64,
    /// Free-space context penalty, non-negative.
    pub position: f64,
    /// Orientation likelihood penalty, non-negative.
    pub orientation: f64,
    /// Shape prior, non-negative.
    pub shape: f64,
    pub total: f64,
    /// Number of stereo points entering the point term.
    pub point_count: usize,
    /// Appearance keypoints that were visible and inside both boxes.
    pub usable_keypoints: usize,
}

impl EnergyReport {
    /// Report with no decomposition: the whole energy sits in `total`.
    pub fn opaque(total: f64) -> EnergyReport {
        EnergyReport {
            points: 0.0,
            keypoints: 0.0,
            wireframe: 0.0,
            position: 0.0,
            orientation: 0.0,
            shape: 0.0,
            total,
            point_count: 0,
            usable_keypoints: 0,
        }
    }
}

/// Anything that can score a vehicle state. The sampler explores through
/// this interface alone, so test energies can stand in for the real one.
pub trait EnergyModel: Sync {
    /// Energy of the state; lower is better. Infinite when the state cannot
    /// be evaluated at all.
    fn energy(&self, state: &VehicleState) -> f64;

    /// Per-term decomposition of the energy, used for fit traces. Models
    /// without one report everything in `total`.
    fn breakdown(&self, state: &VehicleState) -> EnergyReport {
        EnergyReport::opaque(self.energy(state))
    }
}

/// Plane-frame stereo point with its depth-dependent weight.
struct WeightedPoint {
    x: f64,
    y: f64,
    height: f64,
    sigma: f64,
}

/// Nonzero pixels of one observed wireframe channel, holding the square
/// roots of the unit-sum normalised responses.
struct WireChannel {
    nonzero: Vec<(u32, f32)>,
}

/// The fitting energy for one observed vehicle.
///
/// Construction precomputes everything that does not depend on the state:
/// plane coordinates and depth weights of the stereo points, normalised
/// observed wireframe channels, and the subcategory coefficient targets.
pub struct SceneEnergy<'a> {
    model: &'a DeformableVehicleModel,
    lut: &'a VisibilityLut,
    bundle: &'a ObservationBundle,
    frame: &'a PlaneFrame,
    rig: &'a StereoRig,
    grid: Option<&'a FreeSpaceGrid>,
    variant: ModelVariant,
    params: EnergyParams,
    points: Vec<WeightedPoint>,
    wire_observed: [[Option<WireChannel>; 4]; 2],
    /// `(probability, coefficient target)` per subcategory with mass.
    shape_targets: Vec<(f64, Vec<f64>)>,
}

impl<'a> SceneEnergy<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: &'a DeformableVehicleModel,
        lut: &'a VisibilityLut,
        bundle: &'a ObservationBundle,
        frame: &'a PlaneFrame,
        rig: &'a StereoRig,
        grid: Option<&'a FreeSpaceGrid>,
        variant: ModelVariant,
        params: EnergyParams,
    ) -> Result<SceneEnergy<'a>> {
        if params.sigma_disp_px <= 0.0 || params.sigma_model_m <= 0.0 || params.context_cell_m <= 0.0
        {
            return Err(Error::InvalidConfig(
                "energy sigmas and the context cell must be positive".to_string(),
            ));
        }
        if variant.uses_position() && grid.is_none() {
            return Err(Error::InvalidConfig(
                "the position term needs a free-space grid".to_string(),
            ));
        }
        if bundle.points.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        let n_appearance = model.topology.appearance.len();
        for maps in &bundle.keypoint_maps {
            if maps.len() != n_appearance {
                return Err(Error::InvalidConfig(format!(
                    "expected {n_appearance} keypoint channels, got {}",
                    maps.len()
                )));
            }
        }
        for (maps, n) in bundle
            .keypoint_maps
            .iter()
            .chain(&bundle.wireframe_maps)
            .zip([n_appearance, n_appearance, 4usize, 4])
        {
            if maps.len() != n {
                return Err(Error::InvalidConfig(format!(
                    "expected {n} response channels, got {}",
                    maps.len()
                )));
            }
            if maps
                .iter()
                .any(|m| m.width() != CROP_SIZE || m.height() != CROP_SIZE)
            {
                return Err(Error::InvalidConfig(
                    "response maps must match the crop size".to_string(),
                ));
            }
        }

        let mut points = Vec::with_capacity(bundle.points.len());
        for p in &bundle.points {
            let sigma = rig.depth_sigma(p.z, params.sigma_disp_px)?;
            let pp = frame.to_plane(p);
            points.push(WeightedPoint {
                x: pp.x,
                y: pp.y,
                height: pp.z,
                sigma,
            });
        }

        let wire_observed = std::array::from_fn(|i| {
            std::array::from_fn(|s| {
                let map = &bundle.wireframe_maps[i][s];
                let total = map.total();
                if total <= 0.0 {
                    return None;
                }
                let nonzero: Vec<(u32, f32)> = map
                    .data()
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v > 0.0)
                    .map(|(idx, &v)| (idx as u32, ((v as f64 / total).sqrt()) as f32))
                    .collect();
                Some(WireChannel { nonzero })
            })
        });

        let mut shape_targets = Vec::new();
        for t in VehicleType::ALL {
            let prob = bundle.types.prob(t);
            if prob <= 0.0 {
                continue;
            }
            let target = model.mode_gamma(t).ok_or_else(|| {
                Error::InvalidConfig(format!("model has no coefficients for type {t}"))
            })?;
            shape_targets.push((prob, target));
        }

        Ok(SceneEnergy {
            model,
            lut,
            bundle,
            frame,
            rig,
            grid,
            variant,
            params,
            points,
            wire_observed,
            shape_targets,
        })
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    /// Evaluates the energy of a state, split by term.
    pub fn report(&self, state: &VehicleState) -> Result<EnergyReport> {
        let body = self.model.synthesize(&state.gamma)?;
        let center = self.frame.to_camera(state.t.x, state.t.y, 0.0);
        if center.z <= 0.0 {
            return Err(Error::NonPositiveDepth);
        }

        let e_points = self.point_term(state, &body);

        let needs_projection = self.variant.uses_keypoints() || self.variant.uses_wireframe();
        let theta_m = viewpoint_deg(state, self.frame);
        let placed = if needs_projection {
            place(&body, state, self.frame)
        } else {
            Vec::new()
        };

        let (e_keypoints, usable) = if self.variant.uses_keypoints() {
            self.keypoint_term(theta_m, &placed)
        } else {
            (0.0, 0)
        };
        let e_wireframe = if self.variant.uses_wireframe() {
            self.wireframe_term(theta_m, &placed, center.z)
        } else {
            0.0
        };
        let e_position = if self.variant.uses_position() {
            self.position_term(state, &body, center.z)?
        } else {
            0.0
        };
        let e_orientation = if self.variant.uses_orientation() {
            self.params.w_orientation * orientation_energy(&self.bundle.viewpoint, theta_m)
        } else {
            0.0
        };
        let e_shape = self.params.w_shape
            * if self.variant.subcategory_shape_prior() {
                subcategory_shape_energy(&self.shape_targets, &state.gamma, self.model.n_active)
            } else {
                mean_shape_energy(&state.gamma, self.model.n_active)
            };

        let total = e_points + e_keypoints + e_wireframe + e_position + e_orientation + e_shape;
        Ok(EnergyReport {
            points: e_points,
            keypoints: e_keypoints,
            wireframe: e_wireframe,
            position: e_position,
            orientation: e_orientation,
            shape: e_shape,
            total,
            point_count: self.points.len(),
            usable_keypoints: usable,
        })
    }

    /// Mean robustified squared distance of the stereo points to the model
    /// surface, each point weighted by its depth uncertainty.
    fn point_term(&self, state: &VehicleState, body: &[Point3<f64>]) -> f64 {
        let index = MeshIndex::build(SurfaceMesh::new(
            body.to_vec(),
            self.model.topology.mesh.clone(),
        ));
        let (sin_t, cos_t) = state.theta_deg.to_radians().sin_cos();
        let mut acc = 0.0;
        for wp in &self.points {
            let dx = wp.x - state.t.x;
            let dy = wp.y - state.t.y;
            let q = Point3::new(
                cos_t * dx + sin_t * dy,
                -sin_t * dx + cos_t * dy,
                wp.height,
            );
            let d = index.distance(&q);
            acc += huber(d, wp.sigma) / (2.0 * wp.sigma * wp.sigma);
        }
        self.params.w_points * acc / self.points.len() as f64
    }

    /// Reward for high keypoint responses at the projected model keypoints.
    fn keypoint_term(&self, theta_m: f64, placed: &[Point3<f64>]) -> (f64, usize) {
        let mut samples: Vec<[f64; 2]> = Vec::new();
        for (c, &k) in self.model.topology.appearance.iter().enumerate() {
            if !self.lut.keypoint_visible(theta_m, k as usize) {
                continue;
            }
            let p = &placed[k as usize];
            let (Some(l), Some(r)) = (self.rig.project_left(p), self.rig.project_right(p)) else {
                continue;
            };
            if !self.bundle.boxes[0].contains(l.0, l.1) || !self.bundle.boxes[1].contains(r.0, r.1)
            {
                continue;
            }
            let mut pair = [0.0; 2];
            for (i, (u, v)) in [l, r].into_iter().enumerate() {
                let (cx, cy) = self.bundle.boxes[i].to_crop(u, v);
                pair[i] = self.bundle.keypoint_maps[i][c].sample(cx, cy);
            }
            samples.push(pair);
        }
        let usable = samples.len();
        (
            self.params.w_keypoints * keypoint_reward(&samples),
            usable,
        )
    }

    /// Reward for overlap between the rendered visible wireframe and the
    /// observed wireframe responses, per image and side.
    fn wireframe_term(&self, theta_m: f64, placed: &[Point3<f64>], center_z: f64) -> f64 {
        let n = CROP_SIZE as usize;
        // Kept clean between channels by erasing only the drawn window.
        let mut raster = vec![0.0f32; n * n];
        let mut scratch = vec![0.0f32; n * n];
        let sigma_img = self.rig.focal_px * self.params.sigma_model_m / center_z;
        let mut sum = 0.0;
        for i in 0..2 {
            let dbox = &self.bundle.boxes[i];
            let sigma_crop = (sigma_img / (dbox.scale_x() * dbox.scale_y()).sqrt()).clamp(0.5, 40.0);
            for side in Side::ALL {
                let Some(observed) = &self.wire_observed[i][side.index()] else {
                    continue;
                };
                let segments = self.lut.segments(theta_m, side);
                if segments.is_empty() {
                    continue;
                }
                let mut bounds = PixelBounds::empty();
                for seg in segments {
                    let e = self.model.topology.wireframe[side.index()][seg.edge as usize];
                    let a = placed[e[0] as usize];
                    let b = placed[e[1] as usize];
                    let q0 = a + (b - a) * seg.t0;
                    let q1 = a + (b - a) * seg.t1;
                    if q0.z <= 0.1 || q1.z <= 0.1 {
                        continue;
                    }
                    let uv0 = self.project(i, &q0);
                    let uv1 = self.project(i, &q1);
                    let (Some(uv0), Some(uv1)) = (uv0, uv1) else {
                        continue;
                    };
                    draw_line(
                        &mut raster,
                        n,
                        dbox.to_crop(uv0.0, uv0.1),
                        dbox.to_crop(uv1.0, uv1.1),
                        &mut bounds,
                    );
                }
                if bounds.is_empty() {
                    continue;
                }
                let bc =
                    windowed_overlap(&raster, &mut scratch, n, sigma_crop, &bounds, observed)
                        .min(1.0 - 1e-6);
                sum += (1.0 - bc).ln();
                for y in bounds.y0..=bounds.y1 {
                    raster[y * n + bounds.x0..=y * n + bounds.x1].fill(0.0);
                }
            }
        }
        self.params.w_wireframe * 0.5 * sum
    }

    fn project(&self, image: usize, p: &Point3<f64>) -> Option<(f64, f64)> {
        if image == 0 {
            self.rig.project_left(p)
        } else {
            self.rig.project_right(p)
        }
    }

    /// Penalty for covering ground cells that stereo evidence marks free.
    fn position_term(
        &self,
        state: &VehicleState,
        body: &[Point3<f64>],
        center_z: f64,
    ) -> Result<f64> {
        let grid = self.grid.expect("checked at construction");
        let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in body {
            min_x = min_x.min(p.x);
            max_x = max_x.max(p.x);
            min_y = min_y.min(p.y);
            max_y = max_y.max(p.y);
        }
        let area = (max_x - min_x) * (max_y - min_y);
        if area <= 0.0 {
            return Ok(0.0);
        }
        let (sin_t, cos_t) = state.theta_deg.to_radians().sin_cos();
        let (cbx, cby) = (0.5 * (min_x + max_x), 0.5 * (min_y + max_y));
        let center = Vector2::new(
            state.t.x + cos_t * cbx - sin_t * cby,
            state.t.y + sin_t * cbx + cos_t * cby,
        );
        let corners = clip::rect_corners(&center, state.theta_deg, max_x - min_x, max_y - min_y);
        let sigma_c = self.rig.depth_sigma(center_z, self.params.sigma_disp_px)?;
        let lambda = (self.params.context_cell_m / sigma_c).min(1.0);
        let cost = footprint_context_cost(grid, &corners);
        Ok(self.params.w_position * lambda * cost / area)
    }
}

impl EnergyModel for SceneEnergy<'_> {
    fn energy(&self, state: &VehicleState) -> f64 {
        self.report(state).map_or(f64::INFINITY, |r| r.total)
    }

    fn breakdown(&self, state: &VehicleState) -> EnergyReport {
        self.report(state)
            .unwrap_or_else(|_| EnergyReport::opaque(f64::INFINITY))
    }
}

/// Robustified squared distance: quadratic up to `sigma`, linear beyond.
pub fn huber(d: f64, sigma: f64) -> f64 {
    let d = d.abs();
    if d <= sigma {
        d * d
    } else {
        2.0 * sigma * d - sigma * sigma
    }
}

/// Keypoint reward over usable keypoints, each sampled in both images:
/// the mean of `ln(1 - response)`, zero when nothing is usable.
pub(crate) fn keypoint_reward(samples: &[[f64; 2]]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let sum: f64 = samples
        .iter()
        .flat_map(|pair| pair.iter())
        .map(|&h| (1.0 - h).ln())
        .sum();
    sum / (2.0 * samples.len() as f64)
}

/// Bhattacharyya coefficient of two unit-sum distributions.
pub fn bhattacharyya(p: &[f32], q: &[f32]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| (a as f64 * b as f64).sqrt())
        .sum()
}

/// Bhattacharyya coefficient between a raster (with its precomputed sum)
/// and an observed channel stored as square roots of normalised responses.
/// Reference implementation for the windowed fast path.
#[cfg(test)]
fn overlap_coefficient(raster: &[f32], raster_total: f64, observed: &WireChannel) -> f64 {
    let inv = 1.0 / raster_total;
    let mut bc = 0.0;
    for &(idx, sq) in &observed.nonzero {
        let v = raster[idx as usize] as f64;
        if v > 0.0 {
            bc += (v * inv).sqrt() * sq as f64;
        }
    }
    bc
}

/// Negative log-likelihood of a viewpoint under the discrete distribution
/// plus a cosine agreement with its most likely bin.
pub(crate) fn orientation_energy(viewpoint: &ViewpointDistribution, theta_m_deg: f64) -> f64 {
    let p_bin = viewpoint.prob_at(theta_m_deg).max(1e-9);
    let best = viewpoint.bin_center_deg(viewpoint.argmax());
    let delta = (best - theta_m_deg).to_radians();
    let p_cos = (0.5 * (1.0 + delta.cos())).max(1e-9);
    -p_bin.ln() - p_cos.ln()
}

/// Quadratic pull of the shape coefficients towards the subcategory
/// targets, weighted by the type distribution and averaged over components.
pub(crate) fn subcategory_shape_energy(
    targets: &[(f64, Vec<f64>)],
    gamma: &[f64],
    n_active: usize,
) -> f64 {
    if n_active == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for (prob, target) in targets {
        let mut sq = 0.0;
        for s in 0..n_active {
            let g = gamma.get(s).copied().unwrap_or(0.0);
            let t = target.get(s).copied().unwrap_or(0.0);
            sq += (t - g) * (t - g);
        }
        acc += prob * 0.5 * sq;
    }
    acc / n_active as f64
}

/// Quadratic pull of the shape coefficients towards the mean shape,
/// averaged over components.
pub(crate) fn mean_shape_energy(gamma: &[f64], n_active: usize) -> f64 {
    if n_active == 0 {
        return 0.0;
    }
    let acc: f64 = gamma
        .iter()
        .take(n_active)
        .map(|&g| (0.5 * g) * (0.5 * g))
        .sum();
    acc / n_active as f64
}

/// Accumulated `-ln(1 - rho) * overlap` over all grid cells intersecting
/// the footprint polygon, `rho` being the free-space probability. Unknown
/// cells contribute nothing.
pub(crate) fn footprint_context_cost(grid: &FreeSpaceGrid, corners: &[Vector2<f64>; 4]) -> f64 {
    let (mut lo, mut hi) = (Vector2::repeat(f64::INFINITY), Vector2::repeat(f64::NEG_INFINITY));
    for c in corners {
        lo = lo.inf(c);
        hi = hi.sup(c);
    }
    let range = |a: f64, b: f64, origin: f64, n: usize| -> std::ops::Range<usize> {
        let start = ((a - origin) / grid.cell_size).floor().max(0.0) as usize;
        let end = (((b - origin) / grid.cell_size).floor() as isize + 1).clamp(0, n as isize);
        start.min(n)..end as usize
    };
    let mut acc = 0.0;
    for iy in range(lo.y, hi.y, grid.min.y, grid.ny) {
        for ix in range(lo.x, hi.x, grid.min.x, grid.nx) {
            let Some(rho) = grid.occupancy(iy * grid.nx + ix) else {
                continue;
            };
            let rho = rho.min(1.0 - 1e-6);
            if rho <= 0.0 {
                continue;
            }
            let (cell_lo, cell_hi) = grid.cell_bounds(ix, iy);
            let overlap = clip::overlap_area(corners, &cell_lo, &cell_hi);
            if overlap > 0.0 {
                acc -= (1.0 - rho).ln() * overlap;
            }
        }
    }
    acc
}

/// Inclusive pixel window touched by the rasterised wireframe, so the blur
/// and overlap only have to look at rows and columns that can carry mass.
#[derive(Clone, Copy, Debug)]
struct PixelBounds {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

impl PixelBounds {
    fn empty() -> Self {
        PixelBounds { x0: usize::MAX, x1: 0, y0: usize::MAX, y1: 0 }
    }

    fn include(&mut self, x: usize, y: usize) {
        self.x0 = self.x0.min(x);
        self.x1 = self.x1.max(x);
        self.y0 = self.y0.min(y);
        self.y1 = self.y1.max(y);
    }

    fn is_empty(&self) -> bool {
        self.x0 == usize::MAX
    }
}

/// Marks the pixels under the segment `a..b` (crop coordinates) in a square
/// binary raster, growing `bounds` around everything drawn.
fn draw_line(raster: &mut [f32], n: usize, a: (f64, f64), b: (f64, f64), bounds: &mut PixelBounds) {
    // Liang-Barsky clip of the parametric segment to the crop square.
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [
        (-dx, a.0),
        (dx, n as f64 - a.0),
        (-dy, a.1),
        (dy, n as f64 - a.1),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return;
            }
            continue;
        }
        let r = q / p;
        if p < 0.0 {
            t0 = t0.max(r);
        } else {
            t1 = t1.min(r);
        }
        if t0 > t1 {
            return;
        }
    }
    let (x0, y0) = (a.0 + dx * t0, a.1 + dy * t0);
    let (x1, y1) = (a.0 + dx * t1, a.1 + dy * t1);
    let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
    let steps = ((len * 2.0).ceil() as usize).clamp(1, 2048);
    let last = (n - 1) as f64;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = (x0 + (x1 - x0) * t).clamp(0.0, last) as usize;
        let y = (y0 + (y1 - y0) * t).clamp(0.0, last) as usize;
        raster[y * n + x] = 1.0;
        bounds.include(x, y);
    }
}

/// Discrete Gaussian taps truncated at three standard deviations and
/// renormalised, together with the kernel radius.
fn gauss_kernel(n: usize, sigma: f64) -> (usize, Vec<f32>) {
    let radius = ((3.0 * sigma).ceil() as usize).clamp(1, n - 1);
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    for i in 0..=2 * radius {
        let d = i as f64 - radius as f64;
        kernel.push((-0.5 * d * d / (sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    (radius, kernel.iter().map(|&w| (w / norm) as f32).collect())
}

/// Overlap between the blurred, unit-mass-normalised raster and the observed
/// channel, computed without materialising the blurred plane.
///
/// Matches blurring with [`blur_square`], dividing by the total mass and
/// summing `sqrt(p * q)` over the observation: the horizontal pass only
/// visits the rows inside `bounds` (everything else is zero), the total mass
/// is the border-clipped kernel mass spread by each source pixel, and the
/// vertical pass is evaluated just at the observed nonzero pixels.
fn windowed_overlap(
    raster: &[f32],
    scratch: &mut [f32],
    n: usize,
    sigma: f64,
    bounds: &PixelBounds,
    observed: &WireChannel,
) -> f64 {
    if bounds.is_empty() {
        return 0.0;
    }
    let (radius, kernel) = gauss_kernel(n, sigma);

    // Prefix sums of the taps give the mass a source pixel keeps inside the
    // image after border truncation, separably per axis.
    let mut prefix = Vec::with_capacity(kernel.len() + 1);
    let mut acc = 0.0f64;
    prefix.push(0.0);
    for &w in &kernel {
        acc += w as f64;
        prefix.push(acc);
    }
    let clipped = |pos: usize| -> f64 {
        let lo = radius.saturating_sub(pos);
        let hi = (n - 1 - pos + radius).min(2 * radius);
        prefix[hi + 1] - prefix[lo]
    };

    let mut total = 0.0f64;
    for y in bounds.y0..=bounds.y1 {
        let ym = clipped(y);
        for x in bounds.x0..=bounds.x1 {
            let v = raster[y * n + x];
            if v > 0.0 {
                total += v as f64 * clipped(x) * ym;
            }
        }
    }
    if total <= 0.0 {
        return 0.0;
    }

    // Horizontal pass over the touched rows only, shifted-slice updates as in
    // the dense blur so the inner loops stay contiguous.
    for y in bounds.y0..=bounds.y1 {
        let row = &raster[y * n..(y + 1) * n];
        let out = &mut scratch[y * n..(y + 1) * n];
        out.fill(0.0);
        for (j, &w) in kernel.iter().enumerate() {
            let off = j as isize - radius as isize;
            let (dst0, src0) = if off >= 0 {
                (0usize, off as usize)
            } else {
                ((-off) as usize, 0usize)
            };
            let len = n - dst0.max(src0);
            let (dst, src) = (&mut out[dst0..dst0 + len], &row[src0..src0 + len]);
            for i in 0..len {
                dst[i] += w * src[i];
            }
        }
    }

    // Vertical taps gathered at the observed pixels, restricted to the rows
    // the horizontal pass filled.
    let inv = 1.0 / total;
    let mut bc = 0.0f64;
    for &(idx, sq) in &observed.nonzero {
        let (y, x) = ((idx as usize) / n, (idx as usize) % n);
        if y > bounds.y1 + radius || y + radius < bounds.y0 {
            continue;
        }
        let j_lo = (bounds.y0 + radius).saturating_sub(y);
        let j_hi = (bounds.y1 + radius - y).min(2 * radius);
        let mut p = 0.0f32;
        for (j, &w) in kernel[j_lo..=j_hi].iter().enumerate() {
            p += w * scratch[(y + j_lo + j - radius) * n + x];
        }
        if p > 0.0 {
            bc += (p as f64 * inv).sqrt() * sq as f64;
        }
    }
    bc
}

/// In-place separable Gaussian blur of a square image, kernel truncated at
/// three standard deviations and renormalised.
#[cfg(test)]
pub(crate) fn blur_square(buf: &mut [f32], scratch: &mut [f32], n: usize, sigma: f64) {
    let (radius, kernel) = gauss_kernel(n, sigma);

    // Horizontal pass into the scratch buffer, as shifted-slice updates so
    // the inner loops stay contiguous.
    scratch.fill(0.0);
    for y in 0..n {
        let row = &buf[y * n..(y + 1) * n];
        let out = &mut scratch[y * n..(y + 1) * n];
        for (j, &w) in kernel.iter().enumerate() {
            let off = j as isize - radius as isize;
            let (dst0, src0) = if off >= 0 {
                (0usize, off as usize)
            } else {
                ((-off) as usize, 0usize)
            };
            let len = n - dst0.max(src0);
            let (dst, src) = (&mut out[dst0..dst0 + len], &row[src0..src0 + len]);
            for i in 0..len {
                dst[i] += w * src[i];
            }
        }
    }
    // Vertical pass back into the main buffer, one row-level update per tap.
    buf.fill(0.0);
    for (j, &w) in kernel.iter().enumerate() {
        let off = j as isize - radius as isize;
        for y in 0..n {
            let sy = y as isize + off;
            if sy < 0 || sy >= n as isize {
                continue;
            }
            let src = &scratch[sy as usize * n..(sy as usize + 1) * n];
            let dst = &mut buf[y * n..(y + 1) * n];
            for i in 0..n {
                dst[i] += w * src[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observer::{render_observations, NoiseSpec, VehicleTruth, WorldSpec};
    use crate::scene::{GroundPlane, GridExtent, PointLabel};
    use crate::testutil::family_fixture;
    use approx::assert_relative_eq;
    use nalgebra::{Unit, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat_frame() -> PlaneFrame {
        let plane = GroundPlane {
            normal: Unit::new_normalize(Vector3::new(0.0, -1.0, 0.0)),
            offset: -1.65,
        };
        plane.frame()
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ModelVariant::ALL {
            assert_eq!(v.name().parse::<ModelVariant>().unwrap(), v);
        }
        assert!("base-x".parse::<ModelVariant>().is_err());
        assert!(ModelVariant::Full.uses_keypoints());
        assert!(!ModelVariant::Base.subcategory_shape_prior());
        assert!(!ModelVariant::BaseSPO.uses_wireframe());
    }

    #[test]
    fn huber_switches_from_quadratic_to_linear() {
        assert_relative_eq!(huber(0.4, 0.5), 0.16, epsilon = 1e-12);
        assert_relative_eq!(huber(1.0, 0.5), 0.75, epsilon = 1e-12);
        // Continuity and monotonicity at the changeover.
        assert_relative_eq!(huber(0.5, 0.5), 0.25, epsilon = 1e-12);
        assert!(huber(0.51, 0.5) > huber(0.5, 0.5));
        // The weighted form used by the point term.
        assert_relative_eq!(huber(0.4, 0.5) / (2.0 * 0.25), 0.32, epsilon = 1e-12);
    }

    #[test]
    fn keypoint_reward_matches_hand_computation() {
        // One keypoint at response one half in both images.
        assert_relative_eq!(
            keypoint_reward(&[[0.5, 0.5]]),
            0.5f64.ln(),
            epsilon = 1e-12
        );
        assert_eq!(keypoint_reward(&[]), 0.0);
        // Higher responses reward more (more negative).
        assert!(keypoint_reward(&[[0.9, 0.9]]) < keypoint_reward(&[[0.5, 0.5]]));
    }

    #[test]
    fn bhattacharyya_bounds() {
        let p = [0.5f32, 0.5, 0.0, 0.0];
        let q = [0.0f32, 0.0, 0.5, 0.5];
        assert_eq!(bhattacharyya(&p, &q), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut r: Vec<f32> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f32 = r.iter().sum();
        r.iter_mut().for_each(|v| *v /= total);
        assert_relative_eq!(bhattacharyya(&r, &r), 1.0, epsilon = 1e-5);
    }

    #[test]
    fn orientation_energy_hits_the_uniform_reference() {
        let uniform = ViewpointDistribution::uniform(36);
        // With a uniform distribution every bin ties; the argmax bin center
        // is bin zero, so evaluate exactly there.
        let center = uniform.bin_center_deg(uniform.argmax());
        assert_relative_eq!(
            orientation_energy(&uniform, center),
            36f64.ln(),
            epsilon = 1e-12
        );
        // A peaked distribution prefers its mean over a distant angle.
        let peaked = ViewpointDistribution::wrapped_gaussian(123.0, 15.0, 36);
        assert!(
            orientation_energy(&peaked, 125.0) < orientation_energy(&peaked, 200.0)
        );
    }

    #[test]
    fn shape_energies_match_hand_computations() {
        let targets = vec![(0.5, vec![1.0]), (0.5, vec![-1.0])];
        assert_relative_eq!(
            subcategory_shape_energy(&targets, &[0.0], 1),
            0.5,
            epsilon = 1e-12
        );
        // Mean prior: one component at two standard deviations.
        assert_relative_eq!(mean_shape_energy(&[2.0, 0.0, 0.0], 3), 1.0 / 3.0, epsilon = 1e-12);
        assert_eq!(mean_shape_energy(&[], 3), 0.0);
    }

    #[test]
    fn subcategory_energy_is_minimised_at_the_weighted_target_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 3;
        let mut targets = Vec::new();
        let mut weight_sum = 0.0;
        for _ in 0..5 {
            let w: f64 = rng.random_range(0.01..1.0);
            weight_sum += w;
            targets.push((w, (0..n).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>()));
        }
        for t in &mut targets {
            t.0 /= weight_sum;
        }
        let mut best = vec![0.0; n];
        for s in 0..n {
            best[s] = targets.iter().map(|(w, t)| w * t[s]).sum();
        }
        let e_best = subcategory_shape_energy(&targets, &best, n);
        for _ in 0..200 {
            let probe: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            assert!(subcategory_shape_energy(&targets, &probe, n) >= e_best - 1e-12);
        }
    }

    #[test]
    fn footprint_cost_on_a_single_half_free_cell() {
        // One cell, one ground and one object hit: free-space chance 0.5.
        let grid = FreeSpaceGrid {
            cell_size: 0.25,
            min: Vector2::new(0.0, 0.0),
            nx: 1,
            ny: 1,
            ground_counts: vec![1],
            object_counts: vec![1],
        };
        // Footprint congruent with the cell.
        let corners = clip::rect_corners(&Vector2::new(0.125, 0.125), 0.0, 0.25, 0.25);
        let cost = footprint_context_cost(&grid, &corners);
        let area = 0.25 * 0.25;
        assert_relative_eq!(cost, -0.5f64.ln() * area, epsilon = 1e-12);
        // Normalised by the footprint area this is -ln(0.5) per unit lambda.
        assert_relative_eq!(cost / area, -0.5f64.ln(), epsilon = 1e-12);
        // A footprint fully outside the grid costs nothing.
        let far = clip::rect_corners(&Vector2::new(5.0, 5.0), 10.0, 0.25, 0.25);
        assert_eq!(footprint_context_cost(&grid, &far), 0.0);
    }

    #[test]
    fn blur_preserves_mass_and_spread_of_an_impulse() {
        let n = 64;
        let mut buf = vec![0.0f32; n * n];
        let mut scratch = vec![0.0f32; n * n];
        buf[32 * n + 32] = 1.0;
        let sigma = 3.0;
        blur_square(&mut buf, &mut scratch, n, sigma);
        let total: f64 = buf.iter().map(|&v| v as f64).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-4);
        // Discrete variance along x should be close to sigma squared (the
        // kernel is truncated at three sigma, which trims a little tail).
        let mut var = 0.0;
        for y in 0..n {
            for x in 0..n {
                let w = buf[y * n + x] as f64;
                var += w * (x as f64 - 32.0) * (x as f64 - 32.0);
            }
        }
        assert!((var - sigma * sigma).abs() < 0.05 * sigma * sigma, "variance {var}");
        // Peak stays at the impulse.
        let peak = buf
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, 32 * n + 32);
    }

    #[test]
    fn drawn_lines_land_on_the_expected_pixels() {
        let n = 16;
        let mut buf = vec![0.0f32; n * n];
        let mut bounds = PixelBounds::empty();
        draw_line(&mut buf, n, (2.5, 4.5), (9.5, 4.5), &mut bounds);
        for x in 2..=9 {
            assert_eq!(buf[4 * n + x], 1.0, "x {x}");
        }
        assert_eq!(buf.iter().filter(|&&v| v > 0.0).count(), 8);
        assert_eq!((bounds.x0, bounds.x1, bounds.y0, bounds.y1), (2, 9, 4, 4));
        // Fully outside segments draw nothing.
        let mut empty = vec![0.0f32; n * n];
        let mut none = PixelBounds::empty();
        draw_line(&mut empty, n, (-5.0, -3.0), (-1.0, -8.0), &mut none);
        assert!(empty.iter().all(|&v| v == 0.0));
        assert!(none.is_empty());
        // A segment crossing the square is clipped, not dropped.
        let mut crossing = vec![0.0f32; n * n];
        let mut clipped = PixelBounds::empty();
        draw_line(&mut crossing, n, (-10.0, 8.2), (30.0, 8.2), &mut clipped);
        assert_eq!(crossing.iter().filter(|&&v| v > 0.0).count(), n);
        assert_eq!((clipped.x0, clipped.x1), (0, n - 1));
    }

    #[test]
    fn windowed_overlap_matches_the_dense_blur_path() {
        let n = 64;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut checked = 0;
        for _ in 0..25 {
            let mut raster = vec![0.0f32; n * n];
            let mut bounds = PixelBounds::empty();
            let span = -8.0..n as f64 + 8.0;
            for _ in 0..rng.random_range(1..6) {
                let a = (rng.random_range(span.clone()), rng.random_range(span.clone()));
                let b = (rng.random_range(span.clone()), rng.random_range(span.clone()));
                draw_line(&mut raster, n, a, b, &mut bounds);
            }
            if bounds.is_empty() {
                continue;
            }
            let sigma = rng.random_range(0.5..12.0);
            let mut obs = vec![0.0f32; n * n];
            for _ in 0..200 {
                let i = rng.random_range(0..n * n);
                obs[i] = rng.random_range(0.05..1.0);
            }
            let obs_total: f64 = obs.iter().map(|&v| v as f64).sum();
            let channel = WireChannel {
                nonzero: obs
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v > 0.0)
                    .map(|(i, &v)| (i as u32, ((v as f64 / obs_total).sqrt()) as f32))
                    .collect(),
            };
            // Poison the scratch plane to prove rows outside the drawn
            // window are neither trusted nor read.
            let mut scratch = vec![7.0f32; n * n];
            let fast = windowed_overlap(&raster, &mut scratch, n, sigma, &bounds, &channel);
            let mut dense = raster.clone();
            let mut dense_scratch = vec![0.0f32; n * n];
            blur_square(&mut dense, &mut dense_scratch, n, sigma);
            let total: f64 = dense.iter().map(|&v| v as f64).sum();
            let slow = overlap_coefficient(&dense, total, &channel);
            assert_relative_eq!(fast, slow, epsilon = 1e-6, max_relative = 1e-4);
            checked += 1;
        }
        assert!(checked >= 20, "only {checked} rounds produced drawings");
    }

    #[test]
    fn fused_overlap_matches_direct_bhattacharyya() {
        let n = 32;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut raster = vec![0.0f32; n * n];
        let mut scratch = vec![0.0f32; n * n];
        for _ in 0..40 {
            let i = rng.random_range(0..n * n);
            raster[i] = 1.0;
        }
        blur_square(&mut raster, &mut scratch, n, 1.5);
        let mut observed = vec![0.0f32; n * n];
        for _ in 0..60 {
            let i = rng.random_range(0..n * n);
            observed[i] = rng.random_range(0.1..1.0);
        }
        let obs_total: f64 = observed.iter().map(|&v| v as f64).sum();
        let channel = WireChannel {
            nonzero: observed
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > 0.0)
                .map(|(i, &v)| (i as u32, ((v as f64 / obs_total).sqrt()) as f32))
                .collect(),
        };
        let raster_total: f64 = raster.iter().map(|&v| v as f64).sum();
        let fused = overlap_coefficient(&raster, raster_total, &channel);
        let p: Vec<f32> = raster.iter().map(|&v| (v as f64 / raster_total) as f32).collect();
        let q: Vec<f32> = observed.iter().map(|&v| (v as f64 / obs_total) as f32).collect();
        assert_relative_eq!(fused, bhattacharyya(&p, &q), epsilon = 1e-5);
    }

    // Closed-loop helpers for the full-term tests.

    struct Loop {
        bundle: ObservationBundle,
        grid: FreeSpaceGrid,
        frame: PlaneFrame,
        rig: StereoRig,
        truth: VehicleState,
    }

    fn closed_loop(seed: u64, noise: &NoiseSpec) -> Loop {
        let fx = family_fixture();
        let frame = flat_frame();
        let rig = StereoRig::street_default();
        let vtype = VehicleType::Sedan;
        let truth = VehicleState::new(
            Vector2::new(13.0, 1.5),
            40.0,
            fx.model.mode_gamma(vtype).unwrap(),
        );
        let truths = [VehicleTruth {
            vtype,
            state: truth.clone(),
        }];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (scene, mut bundles) = crate::observer::synthesize_world(
            &fx.model,
            &truths,
            &frame,
            &rig,
            noise,
            &WorldSpec::default(),
            &mut rng,
        )
        .unwrap();
        let ground = scene.labelled(PointLabel::Ground);
        let object = scene.labelled(PointLabel::Object);
        let grid = FreeSpaceGrid::build(
            &frame,
            &ground,
            &object,
            crate::scene::DEFAULT_CELL_SIZE_M,
            GridExtent::Auto,
        )
        .unwrap();
        Loop {
            bundle: bundles.remove(0),
            grid,
            frame,
            rig,
            truth,
        }
    }

    #[test]
    fn report_total_decomposes_and_disabled_terms_are_zero() {
        let fx = family_fixture();
        let lp = closed_loop(31, &NoiseSpec::noiseless());
        for variant in ModelVariant::ALL {
            let energy = SceneEnergy::new(
                &fx.model,
                &fx.lut,
                &lp.bundle,
                &lp.frame,
                &lp.rig,
                Some(&lp.grid),
                variant,
                EnergyParams::default(),
            )
            .unwrap();
            let r = energy.report(&lp.truth).unwrap();
            let sum = r.points + r.keypoints + r.wireframe + r.position + r.orientation + r.shape;
            assert!((r.total - sum).abs() < 1e-12, "{variant}: {} vs {sum}", r.total);
            assert!(r.points >= 0.0 && r.keypoints <= 0.0 && r.wireframe <= 0.0);
            assert!(r.position >= 0.0 && r.orientation >= 0.0 && r.shape >= 0.0);
            if !variant.uses_keypoints() {
                assert_eq!(r.keypoints, 0.0);
                assert_eq!(r.wireframe, 0.0);
            }
            if !variant.uses_position() {
                assert_eq!(r.position, 0.0);
            }
            if !variant.uses_orientation() {
                assert_eq!(r.orientation, 0.0);
            }
            assert_eq!(r.point_count, lp.bundle.points.len());
        }
    }

    #[test]
    fn point_term_ignores_point_order() {
        let fx = family_fixture();
        let lp = closed_loop(32, &NoiseSpec::noiseless());
        let mut reversed_bundle = lp.bundle.clone();
        reversed_bundle.points.reverse();
        let params = EnergyParams::default();
        let a = SceneEnergy::new(
            &fx.model, &fx.lut, &lp.bundle, &lp.frame, &lp.rig, None,
            ModelVariant::Base, params.clone(),
        )
        .unwrap();
        let b = SceneEnergy::new(
            &fx.model, &fx.lut, &reversed_bundle, &lp.frame, &lp.rig, None,
            ModelVariant::Base, params,
        )
        .unwrap();
        let state = VehicleState::new(Vector2::new(13.4, 1.2), 47.0, vec![0.4, -0.2, 0.1]);
        let ra = a.report(&state).unwrap();
        let rb = b.report(&state).unwrap();
        assert_relative_eq!(ra.points, rb.points, epsilon = 1e-12);
    }

    #[test]
    fn truth_scores_below_local_perturbations_without_noise() {
        let fx = family_fixture();
        let lp = closed_loop(33, &NoiseSpec::noiseless());
        let energy = SceneEnergy::new(
            &fx.model,
            &fx.lut,
            &lp.bundle,
            &lp.frame,
            &lp.rig,
            Some(&lp.grid),
            ModelVariant::Full,
            EnergyParams::default(),
        )
        .unwrap();
        let e_truth = energy.report(&lp.truth).unwrap().total;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worse = 0;
        for _ in 0..200 {
            let mut s = lp.truth.clone();
            s.t.x += rng.random_range(-0.5..0.5);
            s.t.y += rng.random_range(-0.5..0.5);
            s = VehicleState::new(
                s.t,
                s.theta_deg + rng.random_range(-10.0..10.0),
                s.gamma
                    .iter()
                    .map(|&g| g + rng.random_range(-1.0..1.0))
                    .collect(),
            );
            if s == lp.truth {
                continue;
            }
            let e = energy.energy(&s);
            assert!(e.is_finite());
            if e >= e_truth {
                worse += 1;
            }
        }
        assert_eq!(worse, 200, "every perturbation should score at or above the truth");
        // Gross errors are clearly separated.
        let mut shifted = lp.truth.clone();
        shifted.t.x += 1.0;
        assert!(energy.energy(&shifted) > e_truth + 0.1);
        let turned = VehicleState::new(lp.truth.t, lp.truth.theta_deg + 90.0, lp.truth.gamma.clone());
        assert!(energy.energy(&turned) > e_truth + 0.1);
    }

    #[test]
    fn raising_an_observed_keypoint_response_lowers_the_energy() {
        let fx = family_fixture();
        let lp = closed_loop(34, &NoiseSpec::noiseless());
        let params = EnergyParams::default();
        let base = SceneEnergy::new(
            &fx.model, &fx.lut, &lp.bundle, &lp.frame, &lp.rig, None,
            ModelVariant::BaseKW, params.clone(),
        )
        .unwrap();
        let before = base.report(&lp.truth).unwrap();
        assert!(before.usable_keypoints > 0);

        // Push one populated channel towards saturation around its peak.
        let mut boosted = lp.bundle.clone();
        let mut changed = false;
        'outer: for maps in &mut boosted.keypoint_maps {
            for map in maps.iter_mut() {
                if map.total() > 0.0 {
                    let (px, py) = map.argmax();
                    for dy in -2i64..=2 {
                        for dx in -2i64..=2 {
                            let (x, y) = (px as i64 + dx, py as i64 + dy);
                            if x >= 0 && y >= 0 && (x as u32) < map.width() && (y as u32) < map.height() {
                                let v = map.get(x as u32, y as u32);
                                map.set(x as u32, y as u32, v.max(0.999));
                            }
                        }
                    }
                    changed = true;
                    break 'outer;
                }
            }
        }
        assert!(changed);
        let brighter = SceneEnergy::new(
            &fx.model, &fx.lut, &boosted, &lp.frame, &lp.rig, None,
            ModelVariant::BaseKW, params,
        )
        .unwrap();
        let after = brighter.report(&lp.truth).unwrap();
        assert!(
            after.total <= before.total,
            "brighter responses must not raise the energy: {} vs {}",
            after.total,
            before.total
        );
    }

    #[test]
    fn states_behind_the_camera_are_infinitely_bad() {
        let fx = family_fixture();
        let lp = closed_loop(35, &NoiseSpec::noiseless());
        let energy = SceneEnergy::new(
            &fx.model, &fx.lut, &lp.bundle, &lp.frame, &lp.rig, None,
            ModelVariant::Base, EnergyParams::default(),
        )
        .unwrap();
        let behind = VehicleState::new(Vector2::new(-20.0, 0.0), 0.0, vec![0.0; 3]);
        assert_eq!(energy.energy(&behind), f64::INFINITY);
        // Too many shape coefficients cannot be synthesised either.
        let overlong = VehicleState::new(Vector2::new(13.0, 1.5), 40.0, vec![0.0; 9]);
        assert_eq!(energy.energy(&overlong), f64::INFINITY);
    }

    #[test]
    fn position_variant_requires_a_grid() {
        let fx = family_fixture();
        let frame = flat_frame();
        let rig = StereoRig::street_default();
        let truth = VehicleState::new(Vector2::new(12.0, 0.0), 30.0, vec![0.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bundle = render_observations(
            &fx.model,
            VehicleType::Suv,
            &truth,
            &frame,
            &rig,
            &NoiseSpec::noiseless(),
            &mut rng,
        )
        .unwrap();
        let err = SceneEnergy::new(
            &fx.model, &fx.lut, &bundle, &frame, &rig, None,
            ModelVariant::Full, EnergyParams::default(),
        )
        .err()
        .unwrap();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }
}
