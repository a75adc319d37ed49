//! Synthetic stereo observations of placed vehicles.
//!
//! This module plays the role of the perception front end: given a vehicle
//! with known pose and shape, it renders everything the fitting stage is
//! allowed to see. That is a set of noisy stereo surface points, detection
//! boxes with keypoint and wireframe response maps in both images, and
//! discrete distributions over viewpoint and vehicle type. Because the
//! ground truth is known, any fitting result can be scored exactly.

pub mod heatmap;
pub mod visibility;

use nalgebra::Point3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::mesh::{MeshIndex, SurfaceMesh};
use crate::scene::{PlaneFrame, PointLabel, SceneData, StereoRig};
use crate::shape_model::{place, DeformableVehicleModel};
use crate::types::{Side, VehicleState, VehicleType};

pub use heatmap::{
    heatmaps_from_bytes, heatmaps_to_bytes, read_heatmaps, write_heatmaps, DetectionBox, Heatmap,
    CROP_SIZE,
};
pub use visibility::{point_visible, VisibilityLut, WireSegment};

/// Number of azimuth bins in a viewpoint distribution.
pub const VIEW_BINS: usize = 36;

/// Wraps an angle into [0, 360).
pub fn wrap_360(deg: f64) -> f64 {
    deg.rem_euclid(360.0)
}

/// Azimuth under which a placed vehicle is seen, in the body-frame
/// convention of [`VisibilityLut`]: 0 when the camera faces the front of the
/// vehicle, 90 when it faces the left side.
///
/// The angle combines the heading with the bearing of the ray from the
/// camera to the vehicle center, so two vehicles with equal heading but
/// different lateral positions are seen under different azimuths.
pub fn viewpoint_deg(state: &VehicleState, frame: &PlaneFrame) -> f64 {
    let center = frame.to_camera(state.t.x, state.t.y, 0.0);
    let bearing = center.x.atan2(center.z).to_degrees();
    wrap_360(180.0 - state.theta_deg - bearing)
}

/// Discrete distribution over viewpoint azimuth, bin `b` covering
/// `[b*w, (b+1)*w)` degrees with `w = 360 / bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewpointDistribution {
    pub probs: Vec<f64>,
}

impl ViewpointDistribution {
    pub fn uniform(bins: usize) -> Self {
        ViewpointDistribution {
            probs: vec![1.0 / bins as f64; bins],
        }
    }

    /// Gaussian over the circle, centered on `mean_deg`. A non-positive
    /// sigma collapses to a one-hot distribution at the mean's bin.
    pub fn wrapped_gaussian(mean_deg: f64, sigma_deg: f64, bins: usize) -> Self {
        let mut probs = vec![0.0; bins];
        let width = 360.0 / bins as f64;
        if sigma_deg <= 0.0 {
            let b = (wrap_360(mean_deg) / width) as usize;
            probs[b.min(bins - 1)] = 1.0;
            return ViewpointDistribution { probs };
        }
        for (b, p) in probs.iter_mut().enumerate() {
            let center = (b as f64 + 0.5) * width;
            let base = wrap_360(center - mean_deg);
            for k in [-1.0f64, 0.0, 1.0] {
                let d = base + 360.0 * k;
                *p += (-d * d / (2.0 * sigma_deg * sigma_deg)).exp();
            }
        }
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }
        ViewpointDistribution { probs }
    }

    pub fn bin_width(&self) -> f64 {
        360.0 / self.probs.len() as f64
    }

    pub fn bin_of(&self, deg: f64) -> usize {
        ((wrap_360(deg) / self.bin_width()) as usize).min(self.probs.len() - 1)
    }

    pub fn bin_center_deg(&self, bin: usize) -> f64 {
        (bin as f64 + 0.5) * self.bin_width()
    }

    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// Probability of the bin containing `deg`.
    pub fn prob_at(&self, deg: f64) -> f64 {
        self.probs[self.bin_of(deg)]
    }
}

/// Discrete distribution over the vehicle types.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeDistribution {
    pub probs: [f64; VehicleType::COUNT],
}

impl TypeDistribution {
    pub fn uniform() -> Self {
        TypeDistribution {
            probs: [1.0 / VehicleType::COUNT as f64; VehicleType::COUNT],
        }
    }

    /// Mass `1 - eps` on the given type, the rest spread over the others.
    pub fn peaked(t: VehicleType, eps: f64) -> Self {
        let mut probs = [eps / (VehicleType::COUNT - 1) as f64; VehicleType::COUNT];
        probs[t.index()] = 1.0 - eps;
        TypeDistribution { probs }
    }

    pub fn prob(&self, t: VehicleType) -> f64 {
        self.probs[t.index()]
    }

    pub fn argmax(&self) -> VehicleType {
        let mut best = VehicleType::ALL[0];
        for t in VehicleType::ALL {
            if self.probs[t.index()] > self.probs[best.index()] {
                best = t;
            }
        }
        best
    }
}

/// Rendering and noise parameters for the synthetic observer.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    /// Standard deviation of the disparity error applied to stereo points.
    pub sigma_disp_px: f64,
    /// Blob radius of keypoint responses in crop pixels.
    pub kp_blob_px: f64,
    /// Ridge radius of wireframe responses in crop pixels.
    pub wf_blob_px: f64,
    /// Peak value of keypoint responses.
    pub kp_peak: f64,
    /// Peak value of wireframe responses.
    pub wf_peak: f64,
    /// Spread of the viewpoint distribution around the true azimuth.
    pub view_sigma_deg: f64,
    /// Probability mass assigned to wrong vehicle types.
    pub type_eps: f64,
    /// Surface samples drawn when building the stereo point set.
    pub surface_points: usize,
    /// Detection box padding as a fraction of the tight box.
    pub box_pad: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sigma_disp_px: 1.0,
            kp_blob_px: 3.0,
            wf_blob_px: 2.0,
            kp_peak: 0.95,
            wf_peak: 0.95,
            view_sigma_deg: 15.0,
            type_eps: 0.3,
            surface_points: 600,
            box_pad: 0.05,
        }
    }
}

impl NoiseSpec {
    /// Exact observations: sharp responses at the true projections, an
    /// exact viewpoint bin and type, and noise-free stereo points.
    pub fn noiseless() -> Self {
        NoiseSpec {
            sigma_disp_px: 0.0,
            view_sigma_deg: 0.0,
            type_eps: 0.0,
            ..NoiseSpec::default()
        }
    }
}

/// Everything the fitting stage sees of one vehicle.
#[derive(Debug, Clone)]
pub struct ObservationBundle {
    /// Stereo surface points in camera coordinates.
    pub points: Vec<Point3<f64>>,
    /// Left and right detection boxes in full-image pixels.
    pub boxes: [DetectionBox; 2],
    /// Keypoint response maps per image, one channel per appearance point.
    pub keypoint_maps: [Vec<Heatmap>; 2],
    /// Wireframe response maps per image, one channel per vehicle side.
    pub wireframe_maps: [Vec<Heatmap>; 2],
    pub viewpoint: ViewpointDistribution,
    pub types: TypeDistribution,
}

/// Re-triangulates a camera-frame point through a perturbed disparity,
/// moving it along its viewing ray. `None` when the point cannot be
/// measured (behind the camera or disparity driven non-positive).
pub(crate) fn stereo_reproject<R: Rng + ?Sized>(
    p: &Point3<f64>,
    rig: &StereoRig,
    sigma_disp_px: f64,
    rng: &mut R,
) -> Option<Point3<f64>> {
    if p.z <= 0.0 {
        return None;
    }
    if sigma_disp_px <= 0.0 {
        return Some(*p);
    }
    let d = rig.disparity_at(p.z);
    let noisy = d + Normal::new(0.0, sigma_disp_px).unwrap().sample(rng);
    if noisy <= 1e-9 {
        return None;
    }
    Some(Point3::from(p.coords * (d / noisy)))
}

fn projects_into_both_images(rig: &StereoRig, p: &Point3<f64>) -> bool {
    match (rig.project_left(p), rig.project_right(p)) {
        (Some((ul, vl)), Some((ur, vr))) => rig.in_image(ul, vl) && rig.in_image(ur, vr),
        _ => false,
    }
}

/// Renders the full observation bundle for one placed vehicle.
///
/// Visibility is decided by ray tests against the vehicle's own surface, so
/// keypoints and wireframe portions facing away from the camera leave no
/// response. Fails with a degenerate-viewpoint error when no appearance
/// keypoint is both visible and inside the detection boxes.
pub fn render_observations<R: Rng + ?Sized>(
    model: &DeformableVehicleModel,
    vtype: VehicleType,
    state: &VehicleState,
    frame: &PlaneFrame,
    rig: &StereoRig,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<ObservationBundle> {
    let body = model.synthesize(&state.gamma)?;
    let cam_pts = place(&body, state, frame);
    let index = MeshIndex::build(SurfaceMesh::new(
        cam_pts.clone(),
        model.topology.mesh.clone(),
    ));
    let eye = Point3::origin();

    // Tight boxes around all forward projections, padded and clamped.
    let boxes = build_boxes(rig, &cam_pts, noise.box_pad)?;

    let visible: Vec<bool> = cam_pts
        .iter()
        .map(|p| p.z > 0.0 && point_visible(&index, &eye, p))
        .collect();

    let mut keypoint_maps = [Vec::new(), Vec::new()];
    let mut usable = 0usize;
    for &k in &model.topology.appearance {
        let p = &cam_pts[k as usize];
        let projections = [rig.project_left(p), rig.project_right(p)];
        let in_both = visible[k as usize]
            && projections
                .iter()
                .zip(&boxes)
                .all(|(pr, b)| pr.map(|(u, v)| b.contains(u, v)).unwrap_or(false));
        if in_both {
            usable += 1;
        }
        for (i, proj) in projections.iter().enumerate() {
            let mut map = Heatmap::zeros(CROP_SIZE, CROP_SIZE);
            if visible[k as usize] {
                if let Some((u, v)) = proj {
                    let (x, y) = boxes[i].to_crop(*u, *v);
                    map.splat_gaussian(x, y, noise.kp_blob_px, noise.kp_peak);
                }
            }
            keypoint_maps[i].push(map);
        }
    }
    if usable == 0 {
        return Err(Error::DegenerateViewpoint(
            "no visible keypoints inside the detection boxes".into(),
        ));
    }

    let mut wireframe_maps = [Vec::new(), Vec::new()];
    for (i, map_set) in wireframe_maps.iter_mut().enumerate() {
        let project = |p: &Point3<f64>| {
            if i == 0 {
                rig.project_left(p)
            } else {
                rig.project_right(p)
            }
        };
        for side in Side::ALL {
            let mut map = Heatmap::zeros(CROP_SIZE, CROP_SIZE);
            let edges = &model.topology.wireframe[side.index()];
            for seg in visibility::trace_edges(&index, &eye, &cam_pts, edges) {
                let [a, b] = edges[seg.edge as usize];
                let pa = cam_pts[a as usize];
                let pb = cam_pts[b as usize];
                splat_segment(
                    &mut map,
                    &boxes[i],
                    &project,
                    &pa,
                    &pb,
                    seg.t0,
                    seg.t1,
                    noise.wf_blob_px,
                    noise.wf_peak,
                );
            }
            map_set.push(map);
        }
    }

    // Stereo surface points from the visible part of the hull.
    let mut points = Vec::new();
    let mut attempts = 0usize;
    while points.len() < noise.surface_points && attempts < 50 {
        attempts += 1;
        let batch = index.mesh().sample_surface(noise.surface_points, rng);
        for p in batch {
            if points.len() >= noise.surface_points {
                break;
            }
            if !projects_into_both_images(rig, &p) || !point_visible(&index, &eye, &p) {
                continue;
            }
            if let Some(q) = stereo_reproject(&p, rig, noise.sigma_disp_px, rng) {
                points.push(q);
            }
        }
    }
    if points.is_empty() {
        return Err(Error::DegenerateViewpoint(
            "no visible surface points".into(),
        ));
    }

    let azimuth = viewpoint_deg(state, frame);
    Ok(ObservationBundle {
        points,
        boxes,
        keypoint_maps,
        wireframe_maps,
        viewpoint: ViewpointDistribution::wrapped_gaussian(
            azimuth,
            noise.view_sigma_deg,
            VIEW_BINS,
        ),
        types: TypeDistribution::peaked(vtype, noise.type_eps),
    })
}

fn build_boxes(
    rig: &StereoRig,
    cam_pts: &[Point3<f64>],
    pad: f64,
) -> Result<[DetectionBox; 2]> {
    let degenerate =
        || Error::DegenerateViewpoint("vehicle does not project into both images".into());
    let mut out = Vec::with_capacity(2);
    for image in 0..2 {
        let projected: Vec<(f64, f64)> = cam_pts
            .iter()
            .filter_map(|p| {
                if image == 0 {
                    rig.project_left(p)
                } else {
                    rig.project_right(p)
                }
            })
            .collect();
        let tight = DetectionBox::around(&projected, pad).ok_or_else(degenerate)?;
        out.push(tight.clamped(rig.width, rig.height).ok_or_else(degenerate)?);
    }
    Ok([out[0], out[1]])
}

/// Paints a visible edge portion as a chain of blobs spaced roughly one
/// crop pixel apart.
#[allow(clippy::too_many_arguments)]
fn splat_segment<F>(
    map: &mut Heatmap,
    bbox: &DetectionBox,
    project: &F,
    pa: &Point3<f64>,
    pb: &Point3<f64>,
    t0: f64,
    t1: f64,
    sigma: f64,
    peak: f64,
) where
    F: Fn(&Point3<f64>) -> Option<(f64, f64)>,
{
    let ends = [pa + (pb - pa) * t0, pa + (pb - pa) * t1];
    let (Some(c0), Some(c1)) = (project(&ends[0]), project(&ends[1])) else {
        return;
    };
    let crop0 = bbox.to_crop(c0.0, c0.1);
    let crop1 = bbox.to_crop(c1.0, c1.1);
    let len = ((crop1.0 - crop0.0).powi(2) + (crop1.1 - crop0.1).powi(2)).sqrt();
    let steps = (len.ceil() as usize).clamp(1, 512);
    for s in 0..=steps {
        let t = t0 + (t1 - t0) * s as f64 / steps as f64;
        let p = pa + (pb - pa) * t;
        if let Some((u, v)) = project(&p) {
            let (x, y) = bbox.to_crop(u, v);
            map.splat_gaussian(x, y, sigma, peak);
        }
    }
}

/// Ground-truth description of one vehicle in a scene.
#[derive(Debug, Clone)]
pub struct VehicleTruth {
    pub vtype: VehicleType,
    pub state: VehicleState,
}

/// Layout of the synthetic ground patch, in ground-plane coordinates.
#[derive(Debug, Clone)]
pub struct WorldSpec {
    /// Forward extent of the ground patch, meters from the camera foot.
    pub x_range: (f64, f64),
    /// Lateral extent of the ground patch, positive to camera-left.
    pub y_range: (f64, f64),
    /// Nominal spacing of ground points.
    pub spacing_m: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            x_range: (2.0, 28.0),
            y_range: (-10.0, 10.0),
            spacing_m: 0.2,
        }
    }
}

/// Builds a full synthetic scene: a jittered ground-point carpet with
/// vehicle shadows cut out, labelled object points, and one observation
/// bundle per vehicle.
///
/// Ground points hidden behind a vehicle body are dropped, the way a real
/// stereo pipeline loses the road surface behind parked cars. Occlusion
/// between vehicles is not modelled for the per-vehicle bundles.
pub fn synthesize_world<R: Rng + ?Sized>(
    model: &DeformableVehicleModel,
    truths: &[VehicleTruth],
    frame: &PlaneFrame,
    rig: &StereoRig,
    noise: &NoiseSpec,
    world: &WorldSpec,
    rng: &mut R,
) -> Result<(SceneData, Vec<ObservationBundle>)> {
    if world.spacing_m <= 0.0 {
        return Err(Error::InvalidConfig("ground spacing must be positive".into()));
    }
    let mut bundles = Vec::with_capacity(truths.len());
    let mut indices = Vec::with_capacity(truths.len());
    for truth in truths {
        bundles.push(render_observations(
            model,
            truth.vtype,
            &truth.state,
            frame,
            rig,
            noise,
            rng,
        )?);
        let cam_pts = place(&model.synthesize(&truth.state.gamma)?, &truth.state, frame);
        indices.push(MeshIndex::build(SurfaceMesh::new(
            cam_pts,
            model.topology.mesh.clone(),
        )));
    }

    let mut points = Vec::new();
    let eye = Point3::origin();
    let nx = ((world.x_range.1 - world.x_range.0) / world.spacing_m).floor() as usize;
    let ny = ((world.y_range.1 - world.y_range.0) / world.spacing_m).floor() as usize;
    for ix in 0..=nx {
        for iy in 0..=ny {
            let jitter = 0.4 * world.spacing_m;
            let x = world.x_range.0
                + ix as f64 * world.spacing_m
                + rng.random_range(-jitter..=jitter);
            let y = world.y_range.0
                + iy as f64 * world.spacing_m
                + rng.random_range(-jitter..=jitter);
            let g = frame.to_camera(x, y, 0.0);
            if !projects_into_both_images(rig, &g) {
                continue;
            }
            if indices.iter().any(|idx| !point_visible(idx, &eye, &g)) {
                continue;
            }
            if let Some(q) = stereo_reproject(&g, rig, noise.sigma_disp_px, rng) {
                points.push((q, PointLabel::Ground));
            }
        }
    }
    for bundle in &bundles {
        points.extend(bundle.points.iter().map(|&p| (p, PointLabel::Object)));
    }
    Ok((
        SceneData {
            rig: *rig,
            points,
        },
        bundles,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GroundPlane;
    use crate::testutil::family_fixture;
    use approx::assert_relative_eq;
    use nalgebra::{Unit, Vector2, Vector3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn flat_frame() -> PlaneFrame {
        let plane = GroundPlane {
            normal: Unit::new_normalize(Vector3::new(0.0, -1.0, 0.0)),
            offset: -1.65,
        };
        plane.frame()
    }

    fn state(x: f64, y: f64, theta: f64) -> VehicleState {
        VehicleState::new(Vector2::new(x, y), theta, vec![0.0; 3])
    }

    #[test]
    fn wrapped_gaussian_is_a_distribution_peaked_at_the_mean() {
        let d = ViewpointDistribution::wrapped_gaussian(123.0, 15.0, VIEW_BINS);
        assert_relative_eq!(d.probs.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(d.argmax(), d.bin_of(123.0));
        // Wrapping: mass near 0 and 360 connects.
        let e = ViewpointDistribution::wrapped_gaussian(1.0, 20.0, VIEW_BINS);
        assert!(e.probs[VIEW_BINS - 1] > e.probs[VIEW_BINS / 2] * 10.0);
    }

    #[test]
    fn zero_sigma_viewpoint_is_one_hot() {
        let d = ViewpointDistribution::wrapped_gaussian(77.0, 0.0, VIEW_BINS);
        assert_eq!(d.prob_at(77.0), 1.0);
        assert_relative_eq!(d.probs.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn type_distribution_peaks_at_the_truth() {
        let d = TypeDistribution::peaked(VehicleType::Van, 0.3);
        assert_relative_eq!(d.probs.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_eq!(d.argmax(), VehicleType::Van);
        assert_relative_eq!(d.prob(VehicleType::Van), 0.7, epsilon = 1e-12);
        assert_relative_eq!(d.prob(VehicleType::Sedan), 0.05, epsilon = 1e-12);
    }

    #[test]
    fn viewpoint_angle_follows_heading_and_bearing() {
        let frame = flat_frame();
        // Straight ahead, heading along the viewing direction: rear view.
        assert_relative_eq!(
            viewpoint_deg(&state(10.0, 0.0, 0.0), &frame),
            180.0,
            epsilon = 1e-9
        );
        // Turned 90 degrees to camera-left: pure left view.
        assert_relative_eq!(
            viewpoint_deg(&state(10.0, 0.0, 90.0), &frame),
            90.0,
            epsilon = 1e-9
        );
        // Offset to camera-right, facing the camera.
        let v = viewpoint_deg(&state(10.0, -10.0, 180.0), &frame);
        assert_relative_eq!(v, 315.0, epsilon = 1e-9);
    }

    #[test]
    fn noiseless_heatmaps_peak_at_projected_keypoints() {
        let fx = family_fixture();
        let frame = flat_frame();
        let rig = StereoRig::street_default();
        let st = state(14.0, 1.0, 35.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bundle = render_observations(
            &fx.model,
            VehicleType::Sedan,
            &st,
            &frame,
            &rig,
            &NoiseSpec::noiseless(),
            &mut rng,
        )
        .unwrap();

        let cam_pts = place(&fx.model.synthesize(&st.gamma).unwrap(), &st, &frame);
        let index = MeshIndex::build(SurfaceMesh::new(
            cam_pts.clone(),
            fx.model.topology.mesh.clone(),
        ));
        let mut checked = 0;
        for (c, &k) in fx.model.topology.appearance.iter().enumerate() {
            let p = &cam_pts[k as usize];
            let vis = point_visible(&index, &Point3::origin(), p);
            let map = &bundle.keypoint_maps[0][c];
            if !vis {
                assert_eq!(map.total(), 0.0, "hidden keypoint {k} left a response");
                continue;
            }
            let (u, v) = rig.project_left(p).unwrap();
            let (x, y) = bundle.boxes[0].to_crop(u, v);
            if x < 1.0 || y < 1.0 || x > (CROP_SIZE - 1) as f64 || y > (CROP_SIZE - 1) as f64 {
                continue;
            }
            let (ax, ay) = map.argmax();
            assert!(
                (ax as f64 + 0.5 - x).abs() <= 1.0 && (ay as f64 + 0.5 - y).abs() <= 1.0,
                "keypoint {k}: peak at ({ax},{ay}), projection at ({x:.2},{y:.2})",
            );
            checked += 1;
        }
        assert!(checked >= 8, "only {checked} visible keypoints checked");
    }

    #[test]
    fn wireframe_channels_match_facing_sides() {
        let fx = family_fixture();
        let frame = flat_frame();
        let rig = StereoRig::street_default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // Heading 0 means the camera sees the rear.
        let bundle = render_observations(
            &fx.model,
            VehicleType::Sedan,
            &state(12.0, 0.0, 0.0),
            &frame,
            &rig,
            &NoiseSpec::noiseless(),
            &mut rng,
        )
        .unwrap();
        let energy_of = |side: Side| bundle.wireframe_maps[0][side.index()].total();
        assert!(energy_of(Side::Back) > 0.0);
        assert_eq!(energy_of(Side::Front), 0.0);
    }

    #[test]
    fn disparity_noise_matches_the_depth_model() {
        let rig = StereoRig::street_default();
        let p = Point3::new(0.5, 0.8, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 20_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let q = stereo_reproject(&p, &rig, 1.0, &mut rng).unwrap();
            let r = q.z - p.z;
            sum += r;
            sum2 += r * r;
        }
        let mean = sum / n as f64;
        let std = (sum2 / n as f64 - mean * mean).sqrt();
        let expected = rig.depth_sigma(10.0, 1.0).unwrap();
        assert!(
            (std - expected).abs() / expected < 0.15,
            "measured {std:.4}, expected {expected:.4}",
        );
    }

    #[test]
    fn observation_points_lie_on_the_visible_surface() {
        let fx = family_fixture();
        let frame = flat_frame();
        let rig = StereoRig::street_default();
        let st = state(11.0, -2.0, 140.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let bundle = render_observations(
            &fx.model,
            VehicleType::Suv,
            &st,
            &frame,
            &rig,
            &NoiseSpec::noiseless(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(bundle.points.len(), NoiseSpec::default().surface_points);
        let cam_pts = place(&fx.model.synthesize(&st.gamma).unwrap(), &st, &frame);
        let index = MeshIndex::build(SurfaceMesh::new(
            cam_pts,
            fx.model.topology.mesh.clone(),
        ));
        for p in &bundle.points {
            assert!(index.distance(p) < 1e-9);
            assert!(projects_into_both_images(&rig, p));
        }
    }

    #[test]
    fn behind_camera_placement_is_degenerate() {
        let fx = family_fixture();
        let frame = flat_frame();
        let rig = StereoRig::street_default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let err = render_observations(
            &fx.model,
            VehicleType::Sedan,
            &state(-10.0, 0.0, 0.0),
            &frame,
            &rig,
            &NoiseSpec::noiseless(),
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DegenerateViewpoint(_)));
    }

    #[test]
    fn world_masks_ground_hidden_by_vehicles() {
        let fx = family_fixture();
        let frame = flat_frame();
        let rig = StereoRig::street_default();
        let truth = VehicleTruth {
            vtype: VehicleType::Sedan,
            state: state(10.0, 0.0, 25.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (scene, bundles) = synthesize_world(
            &fx.model,
            std::slice::from_ref(&truth),
            &frame,
            &rig,
            &NoiseSpec::noiseless(),
            &WorldSpec::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(bundles.len(), 1);
        let near = |p: &Point3<f64>, x: f64, y: f64, r: f64| {
            let q = frame.to_plane(p);
            (q.x - x).hypot(q.y - y) < r
        };
        let ground_at = |x: f64, y: f64, r: f64| {
            scene
                .labelled(PointLabel::Ground)
                .iter()
                .filter(|p| near(p, x, y, r))
                .count()
        };
        // The carpet has a hole under the vehicle. The probe sits forward of
        // the center: the road just behind the rear overhang stays visible
        // under the raised rear lip, and glancing rays pass under the far
        // rocker. Off to the side there is no hole.
        assert_eq!(ground_at(11.3, 0.0, 0.6), 0);
        assert!(ground_at(10.0, 6.0, 0.8) > 10);
        assert!(scene.labelled(PointLabel::Object).len() >= 100);
    }

    #[test]
    fn same_seed_reproduces_the_world() {
        let fx = family_fixture();
        let frame = flat_frame();
        let rig = StereoRig::street_default();
        let truth = VehicleTruth {
            vtype: VehicleType::Van,
            state: state(13.0, 2.0, 200.0),
        };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            synthesize_world(
                &fx.model,
                std::slice::from_ref(&truth),
                &frame,
                &rig,
                &NoiseSpec::default(),
                &WorldSpec::default(),
                &mut rng,
            )
            .unwrap()
        };
        let (scene_a, bundles_a) = run();
        let (scene_b, bundles_b) = run();
        assert_eq!(scene_a.points.len(), scene_b.points.len());
        for ((pa, la), (pb, lb)) in scene_a.points.iter().zip(&scene_b.points) {
            assert_eq!(pa, pb);
            assert_eq!(la, lb);
        }
        assert_eq!(bundles_a[0].points, bundles_b[0].points);
        assert_eq!(bundles_a[0].keypoint_maps, bundles_b[0].keypoint_maps);
    }
}
