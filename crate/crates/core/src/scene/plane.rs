//! Ground plane estimation and the in-plane coordinate frame.

use nalgebra::{Matrix3, Point3, Unit, Vector3};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Plane `normal . x = offset` in camera coordinates. The normal points from
/// the road up towards the camera, so the camera origin has a positive
/// signed distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundPlane {
    pub normal: Unit<Vector3<f64>>,
    pub offset: f64,
}

impl GroundPlane {
    /// A level road 1.65 m below the camera (y down in camera coordinates).
    pub fn level(camera_height_m: f64) -> Self {
        GroundPlane {
            normal: Unit::new_normalize(Vector3::new(0.0, -1.0, 0.0)),
            offset: -camera_height_m,
        }
    }

    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }

    /// Deterministic in-plane frame: origin at the foot of the camera
    /// perpendicular, x axis along the projected viewing direction, y axis
    /// completing a right-handed system with the upward normal (it points to
    /// the camera's left).
    pub fn frame(&self) -> PlaneFrame {
        let n = self.normal.into_inner();
        let origin = Point3::from(n * self.offset);
        let view = Vector3::new(0.0, 0.0, 1.0);
        let mut x = view - n * view.dot(&n);
        if x.norm() < 1e-9 {
            // Viewing direction parallel to the normal; fall back to camera x.
            let alt = Vector3::new(1.0, 0.0, 0.0);
            x = alt - n * alt.dot(&n);
        }
        let x = Unit::new_normalize(x).into_inner();
        let y = n.cross(&x);
        PlaneFrame {
            origin,
            axis_x: x,
            axis_y: y,
            normal: n,
        }
    }
}

/// Orthonormal plane coordinate frame in camera space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFrame {
    pub origin: Point3<f64>,
    pub axis_x: Vector3<f64>,
    pub axis_y: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl PlaneFrame {
    /// Plane coordinates `(x, y, height)` of a camera-space point.
    pub fn to_plane(&self, p: &Point3<f64>) -> Vector3<f64> {
        let d = p - self.origin;
        Vector3::new(d.dot(&self.axis_x), d.dot(&self.axis_y), d.dot(&self.normal))
    }

    /// Camera-space point for plane coordinates.
    pub fn to_camera(&self, x: f64, y: f64, height: f64) -> Point3<f64> {
        self.origin + self.axis_x * x + self.axis_y * y + self.normal * height
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_tol_m: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            iterations: 500,
            inlier_tol_m: 0.05,
            seed: 0,
        }
    }
}

/// RANSAC plane fit. Returns the refined plane together with the indices of
/// ground (inlier) and object (outlier) points.
///
/// The best sampled triple's consensus set is refined by a least squares
/// plane, then the partition is recomputed against the refined plane so every
/// returned ground point lies within the tolerance.
pub fn fit_ground_plane(
    points: &[Point3<f64>],
    params: &RansacParams,
) -> Result<(GroundPlane, Vec<usize>, Vec<usize>)> {
    if points.len() < 3 {
        return Err(Error::EmptyPointSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let scale = points
        .iter()
        .map(|p| p.coords.norm())
        .fold(0.0f64, f64::max)
        .max(1.0);

    let mut best: Option<(usize, Unit<Vector3<f64>>, f64)> = None;
    for _ in 0..params.iterations {
        let idx = sample_indices(&mut rng, points.len(), 3);
        let (a, b, c) = (points[idx.index(0)], points[idx.index(1)], points[idx.index(2)]);
        let cross = (b - a).cross(&(c - a));
        if cross.norm() < 1e-9 * scale * scale {
            continue; // collinear triple
        }
        let n = Unit::new_normalize(cross);
        let d = n.dot(&a.coords);
        let inliers = points
            .iter()
            .filter(|p| (n.dot(&p.coords) - d).abs() <= params.inlier_tol_m)
            .count();
        if best.map(|(count, _, _)| inliers > count).unwrap_or(true) {
            best = Some((inliers, n, d));
        }
    }
    let (_, n0, d0) = best.ok_or(Error::CollinearPoints)?;

    let consensus: Vec<usize> = (0..points.len())
        .filter(|&i| (n0.dot(&points[i].coords) - d0).abs() <= params.inlier_tol_m)
        .collect();
    let plane = least_squares_plane(points, &consensus)?;

    let mut ground = Vec::new();
    let mut object = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if plane.signed_distance(p).abs() <= params.inlier_tol_m {
            ground.push(i);
        } else {
            object.push(i);
        }
    }
    Ok((plane, ground, object))
}

fn least_squares_plane(points: &[Point3<f64>], idx: &[usize]) -> Result<GroundPlane> {
    let mut centroid = Vector3::zeros();
    for &i in idx {
        centroid += points[i].coords;
    }
    centroid /= idx.len() as f64;
    let mut scatter = Matrix3::zeros();
    for &i in idx {
        let d = points[i].coords - centroid;
        scatter += d * d.transpose();
    }
    let eig = scatter.symmetric_eigen();
    // Normal: eigenvector of the smallest eigenvalue. Collinear consensus has
    // two vanishing eigenvalues, leaving the normal undetermined.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let lmax = eig.eigenvalues[order[2]];
    if lmax <= 0.0 || eig.eigenvalues[order[1]] < 1e-12 * lmax {
        return Err(Error::CollinearPoints);
    }
    let mut normal = eig.eigenvectors.column(order[0]).into_owned();
    let mut offset = normal.dot(&centroid);
    // Orient the normal towards the camera origin (upwards for a road).
    if -offset < 0.0 {
        normal = -normal;
        offset = -offset;
    }
    Ok(GroundPlane {
        normal: Unit::new_normalize(normal),
        offset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn road_points(rng: &mut ChaCha8Rng, n: usize, noise: f64) -> Vec<Point3<f64>> {
        // Camera 1.65 m above a level road: y = 1.65 in camera coordinates.
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-8.0..8.0),
                    1.65 + noise * rng.random_range(-1.0..1.0),
                    rng.random_range(4.0..30.0),
                )
            })
            .collect()
    }

    #[test]
    fn exact_plane_is_recovered_with_no_objects() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = road_points(&mut rng, 300, 0.0);
        let (plane, ground, object) = fit_ground_plane(&pts, &RansacParams::default()).unwrap();
        assert!(object.is_empty());
        assert_eq!(ground.len(), 300);
        assert_relative_eq!(plane.normal.y.abs(), 1.0, epsilon = 1e-9);
        assert_relative_eq!(plane.signed_distance(&Point3::new(0.0, 1.65, 10.0)), 0.0, epsilon = 1e-9);
        // Normal oriented towards the camera: origin on the positive side.
        assert!(plane.signed_distance(&Point3::origin()) > 0.0);
    }

    #[test]
    fn three_points_define_the_plane() {
        let pts = vec![
            Point3::new(0.0, 1.0, 5.0),
            Point3::new(1.0, 1.0, 6.0),
            Point3::new(-1.0, 1.0, 7.0),
        ];
        let (plane, ground, _) = fit_ground_plane(&pts, &RansacParams::default()).unwrap();
        assert_eq!(ground.len(), 3);
        assert_relative_eq!(plane.normal.y.abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn outliers_do_not_bias_the_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pts = road_points(&mut rng, 400, 0.01);
        // 20 percent outliers above the road (an obstacle).
        for _ in 0..100 {
            pts.push(Point3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-0.5..1.0),
                rng.random_range(8.0..12.0),
            ));
        }
        let (plane, _, object) = fit_ground_plane(&pts, &RansacParams::default()).unwrap();
        let up = Vector3::new(0.0, -1.0, 0.0);
        let angle = plane.normal.angle(&up).to_degrees();
        assert!(angle < 1.0, "normal off by {angle} degrees");
        assert!(object.len() >= 95);
    }

    #[test]
    fn point_order_does_not_change_the_consensus() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts = road_points(&mut rng, 200, 0.01);
        for _ in 0..40 {
            pts.push(Point3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-0.5..0.8),
                rng.random_range(8.0..12.0),
            ));
        }
        let params = RansacParams::default();
        let (_, ground_a, _) = fit_ground_plane(&pts, &params).unwrap();
        let mut sorted: Vec<Point3<f64>> = pts.clone();
        sorted.reverse();
        let (_, ground_b, _) = fit_ground_plane(&sorted, &params).unwrap();
        // Compare the selected point sets, not the indices.
        let mut set_a: Vec<_> = ground_a
            .iter()
            .map(|&i| format!("{:.6},{:.6},{:.6}", pts[i].x, pts[i].y, pts[i].z))
            .collect();
        let mut set_b: Vec<_> = ground_b
            .iter()
            .map(|&i| format!("{:.6},{:.6},{:.6}", sorted[i].x, sorted[i].y, sorted[i].z))
            .collect();
        set_a.sort();
        set_b.sort();
        assert_eq!(set_a, set_b);
    }

    #[test]
    fn collinear_points_fail() {
        let pts: Vec<Point3<f64>> = (0..50)
            .map(|i| Point3::new(i as f64 * 0.1, 1.0, 5.0 + i as f64 * 0.2))
            .collect();
        assert!(matches!(
            fit_ground_plane(&pts, &RansacParams::default()),
            Err(Error::CollinearPoints)
        ));
    }

    #[test]
    fn frame_axes_are_orthonormal_and_right_handed() {
        let plane = GroundPlane::level(1.65);
        let f = plane.frame();
        assert_relative_eq!(f.axis_x.norm(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(f.axis_y.norm(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(f.axis_x.dot(&f.axis_y), 0.0, epsilon = 1e-12);
        assert_relative_eq!((f.axis_x.cross(&f.axis_y) - f.normal).norm(), 0.0, epsilon = 1e-12);
        // x follows the viewing direction, y points to the camera's left.
        assert!(f.axis_x.z > 0.99);
        assert!(f.axis_y.x < -0.99);
    }

    #[test]
    fn plane_coordinates_round_trip() {
        let plane = GroundPlane::level(1.65);
        let f = plane.frame();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let p = Point3::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-10.0..30.0),
            );
            let c = f.to_plane(&p);
            let q = f.to_camera(c.x, c.y, c.z);
            assert!((p - q).norm() < 1e-9);
        }
    }
}
