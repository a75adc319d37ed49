//! Procedurally generated training family of vehicle keypoint sets.
//!
//! Seven vehicle types are modelled as parametric silhouettes sharing one
//! keypoint layout of 144 points:
//!
//! * 84 side-wall points: 14 stations along the length, three levels each
//!   (underbody edge, rocker, belt line), on both sides;
//! * 14 centreline points tracing the silhouette from rear bumper over the
//!   roof to the front bumper;
//! * 12 roof-edge points: 6 stations per side over the cabin;
//! * 34 accessory points: 4 wheels with 5 points each, 4 headlights,
//!   4 taillights, 2 door mirrors, 2 licence plates, 2 fog lights.
//!
//! All samples are exactly left/right symmetric. Per-type dimension spreads
//! reproduce the published CAD-set statistics: each type's population
//! standard deviation of length, width and height is matched exactly, and
//! the family-wide mean dimensions are 4.35 x 1.80 x 1.49 m.

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::shape_model::{learn_asm, DeformableVehicleModel, KeypointSet, Topology};
use crate::types::VehicleType;

/// Keypoints per training sample.
pub const KEYPOINT_COUNT: usize = 144;

/// Training samples in the family.
pub const FAMILY_SIZE: usize = 36;

/// Normalised station positions along the length (0 = rear, 1 = front).
const STATIONS: [f64; 14] = [
    0.0, 0.05, 0.12, 0.21, 0.31, 0.42, 0.53, 0.63, 0.72, 0.80, 0.87, 0.93, 0.97, 1.0,
];

/// Roof-edge stations; the cabin band is shared by all types so that one
/// triangulation fits the whole family.
const ROOF_STATIONS: [f64; 6] = [0.34, 0.42, 0.50, 0.58, 0.66, 0.72];

/// Centreline stations lying under the roof band (indices into `STATIONS`).
const CABIN_CENTER: [usize; 3] = [5, 6, 7];

/// Family-wide target mean dimensions in metres.
const TARGET_MEAN: [f64; 3] = [4.35, 1.80, 1.49];

struct TypeStyle {
    vtype: VehicleType,
    count: usize,
    /// Mean length, width, height before the family-wide mean correction.
    dims: [f64; 3],
    /// Per-type dimension standard deviations (length, width, height).
    sdev: [f64; 3],
    /// Centreline silhouette as (station, z / height) breakpoints.
    profile: &'static [(f64, f64)],
    /// Belt line z / height at the rear, middle and front.
    belt: [f64; 3],
    /// Underbody clearance as a fraction of height.
    clearance: f64,
    /// Roof half-width as a fraction of the body half-width.
    roof_width: f64,
    /// Wheel radius as a fraction of height.
    wheel_radius: f64,
    /// Rear and front axle stations.
    axles: [f64; 2],
}

/// Published per-type dimension standard deviations; silhouettes and mean
/// dimensions are modelled after the corresponding body styles.
const STYLES: [TypeStyle; 7] = [
    TypeStyle {
        vtype: VehicleType::CompactCar,
        count: 6,
        dims: [4.05, 1.74, 1.50],
        sdev: [0.21, 0.05, 0.10],
        profile: &[
            (0.0, 0.46),
            (0.04, 0.62),
            (0.10, 0.72),
            (0.30, 1.0),
            (0.62, 1.0),
            (0.74, 0.80),
            (0.84, 0.60),
            (0.96, 0.56),
            (1.0, 0.42),
        ],
        belt: [0.60, 0.56, 0.54],
        clearance: 0.12,
        roof_width: 0.82,
        wheel_radius: 0.21,
        axles: [0.17, 0.83],
    },
    TypeStyle {
        vtype: VehicleType::EstateCar,
        count: 5,
        dims: [4.35, 1.80, 1.48],
        sdev: [0.24, 0.07, 0.06],
        profile: &[
            (0.0, 0.46),
            (0.04, 0.64),
            (0.08, 0.82),
            (0.20, 1.0),
            (0.68, 1.0),
            (0.78, 0.78),
            (0.86, 0.60),
            (0.96, 0.56),
            (1.0, 0.42),
        ],
        belt: [0.62, 0.57, 0.54],
        clearance: 0.12,
        roof_width: 0.84,
        wheel_radius: 0.21,
        axles: [0.16, 0.84],
    },
    TypeStyle {
        vtype: VehicleType::Sedan,
        count: 6,
        dims: [4.45, 1.80, 1.42],
        sdev: [0.19, 0.04, 0.05],
        profile: &[
            (0.0, 0.44),
            (0.04, 0.60),
            (0.26, 0.62),
            (0.32, 0.72),
            (0.40, 1.0),
            (0.62, 1.0),
            (0.70, 0.90),
            (0.78, 0.64),
            (0.86, 0.58),
            (0.97, 0.56),
            (1.0, 0.42),
        ],
        belt: [0.60, 0.55, 0.53],
        clearance: 0.12,
        roof_width: 0.80,
        wheel_radius: 0.22,
        axles: [0.16, 0.84],
    },
    TypeStyle {
        vtype: VehicleType::Suv,
        count: 5,
        dims: [4.40, 1.84, 1.62],
        sdev: [0.39, 0.07, 0.14],
        profile: &[
            (0.0, 0.50),
            (0.03, 0.72),
            (0.08, 0.92),
            (0.22, 1.0),
            (0.70, 1.0),
            (0.80, 0.82),
            (0.88, 0.68),
            (0.97, 0.64),
            (1.0, 0.48),
        ],
        belt: [0.66, 0.62, 0.60],
        clearance: 0.17,
        roof_width: 0.84,
        wheel_radius: 0.24,
        axles: [0.16, 0.84],
    },
    TypeStyle {
        vtype: VehicleType::Van,
        count: 4,
        dims: [4.45, 1.84, 1.72],
        sdev: [0.82, 0.28, 0.28],
        profile: &[
            (0.0, 0.50),
            (0.03, 0.80),
            (0.10, 1.0),
            (0.80, 1.0),
            (0.90, 0.74),
            (0.97, 0.58),
            (1.0, 0.46),
        ],
        belt: [0.64, 0.60, 0.56],
        clearance: 0.13,
        roof_width: 0.90,
        wheel_radius: 0.19,
        axles: [0.14, 0.86],
    },
    TypeStyle {
        vtype: VehicleType::SportsCar,
        count: 5,
        dims: [4.25, 1.80, 1.28],
        sdev: [0.22, 0.04, 0.13],
        profile: &[
            (0.0, 0.48),
            (0.05, 0.64),
            (0.28, 0.68),
            (0.40, 1.0),
            (0.60, 1.0),
            (0.68, 0.84),
            (0.76, 0.60),
            (0.90, 0.50),
            (0.97, 0.48),
            (1.0, 0.40),
        ],
        belt: [0.66, 0.58, 0.50],
        clearance: 0.09,
        roof_width: 0.72,
        wheel_radius: 0.26,
        axles: [0.18, 0.80],
    },
    TypeStyle {
        vtype: VehicleType::Truck,
        count: 5,
        dims: [4.55, 1.82, 1.60],
        sdev: [0.26, 0.19, 0.12],
        profile: &[
            (0.0, 0.48),
            (0.02, 0.56),
            (0.42, 0.56),
            (0.50, 1.0),
            (0.72, 1.0),
            (0.82, 0.76),
            (0.92, 0.62),
            (0.97, 0.60),
            (1.0, 0.46),
        ],
        belt: [0.56, 0.54, 0.58],
        clearance: 0.17,
        roof_width: 0.85,
        wheel_radius: 0.22,
        axles: [0.15, 0.78],
    },
];

// Index layout. Wall points are station-major with levels underbody (0),
// rocker (1), belt (2); the left side (+y) comes first.
pub fn wall(side: usize, station: usize, level: usize) -> u32 {
    (side * 42 + station * 3 + level) as u32
}

pub fn center(station: usize) -> u32 {
    (84 + station) as u32
}

pub fn roof(side: usize, station: usize) -> u32 {
    (98 + side * 6 + station) as u32
}

/// Wheels in order front-left, front-right, rear-left, rear-right; points
/// per wheel: hub, forward rim, rear rim, top rim, ground contact.
pub fn wheel(w: usize, k: usize) -> u32 {
    (110 + w * 5 + k) as u32
}

pub const HEADLIGHT: [u32; 4] = [130, 131, 132, 133];
pub const TAILLIGHT: [u32; 4] = [134, 135, 136, 137];
pub const DOOR_MIRROR: [u32; 2] = [138, 139];
pub const PLATE: [u32; 2] = [140, 141];
pub const FOG: [u32; 2] = [142, 143];

fn interp(breaks: &[(f64, f64)], u: f64) -> f64 {
    if u <= breaks[0].0 {
        return breaks[0].1;
    }
    for w in breaks.windows(2) {
        if u <= w[1].0 {
            let t = (u - w[0].0) / (w[1].0 - w[0].0);
            return w[0].1 + t * (w[1].1 - w[0].1);
        }
    }
    breaks[breaks.len() - 1].1
}

/// Plan-view half-width factor: full width over the middle, tapered ends.
fn plan(u: f64) -> f64 {
    if u < 0.25 {
        0.62 + (1.0 - 0.62) * (u / 0.25)
    } else if u > 0.75 {
        0.58 + (1.0 - 0.58) * ((1.0 - u) / 0.25)
    } else {
        1.0
    }
}

fn build_points(style: &TypeStyle, dims: [f64; 3]) -> Vec<Point3<f64>> {
    let [l, w, h] = dims;
    let half_w = w / 2.0;
    let x_of = |u: f64| (u - 0.5) * l;
    let belt_z = |u: f64| interp(&[(0.0, style.belt[0]), (0.5, style.belt[1]), (1.0, style.belt[2])], u) * h;
    let bottom_z = |u: f64| {
        let lift = if u == 0.0 || u == 1.0 { 0.05 } else { 0.0 };
        (style.clearance + lift) * h
    };
    let center_z = |u: f64| interp(style.profile, u) * h;

    let mut pts = vec![Point3::origin(); KEYPOINT_COUNT];
    let mut put = |idx: u32, x: f64, y: f64, z: f64| {
        pts[idx as usize] = Point3::new(x, y, z);
    };

    for (i, &u) in STATIONS.iter().enumerate() {
        let x = x_of(u);
        let wy = plan(u) * half_w;
        let zb = bottom_z(u);
        let zt = belt_z(u);
        let zr = zb + 0.38 * (zt - zb);
        for side in 0..2 {
            let s = if side == 0 { 1.0 } else { -1.0 };
            put(wall(side, i, 0), x, s * 0.90 * wy, zb);
            put(wall(side, i, 1), x, s * wy, zr);
            put(wall(side, i, 2), x, s * 0.96 * wy, zt);
        }
        put(center(i), x, 0.0, center_z(u));
    }
    for (j, &u) in ROOF_STATIONS.iter().enumerate() {
        let z = (interp(style.profile, u) - 0.02) * h;
        let y = style.roof_width * half_w;
        put(roof(0, j), x_of(u), y, z);
        put(roof(1, j), x_of(u), -y, z);
    }
    let r = style.wheel_radius * h;
    for (w_i, &(axle, side)) in [(1usize, 0usize), (1, 1), (0, 0), (0, 1)].iter().enumerate() {
        let xa = x_of(style.axles[axle]);
        // Tires run flush with the rocker line so they read as visible from
        // their own side of the body.
        let wheel_y = plan(style.axles[axle]) * half_w;
        let y = if side == 0 { wheel_y } else { -wheel_y };
        put(wheel(w_i, 0), xa, y, r);
        put(wheel(w_i, 1), xa + r, y, r);
        put(wheel(w_i, 2), xa - r, y, r);
        put(wheel(w_i, 3), xa, y, 2.0 * r);
        put(wheel(w_i, 4), xa, y, 0.0);
    }
    let front_z = 0.80 * style.belt[2] * h;
    let rear_z = 0.85 * style.belt[0] * h;
    put(HEADLIGHT[0], 0.485 * l, 0.30 * w, front_z);
    put(HEADLIGHT[1], 0.485 * l, -0.30 * w, front_z);
    put(HEADLIGHT[2], 0.485 * l, 0.15 * w, front_z);
    put(HEADLIGHT[3], 0.485 * l, -0.15 * w, front_z);
    put(TAILLIGHT[0], -0.485 * l, 0.30 * w, rear_z);
    put(TAILLIGHT[1], -0.485 * l, -0.30 * w, rear_z);
    put(TAILLIGHT[2], -0.485 * l, 0.15 * w, rear_z);
    put(TAILLIGHT[3], -0.485 * l, -0.15 * w, rear_z);
    let mirror_z = (interp(&[(0.0, style.belt[0]), (0.5, style.belt[1]), (1.0, style.belt[2])], 0.70) + 0.10) * h;
    put(DOOR_MIRROR[0], x_of(0.70), half_w, mirror_z);
    put(DOOR_MIRROR[1], x_of(0.70), -half_w, mirror_z);
    put(PLATE[0], 0.5 * l, 0.0, 0.28 * h);
    put(PLATE[1], -0.5 * l, 0.0, 0.28 * h);
    put(FOG[0], 0.49 * l, 0.32 * w, 0.20 * h);
    put(FOG[1], 0.49 * l, -0.32 * w, 0.20 * h);
    pts
}

/// Merges two index polylines into a triangle strip, advancing along the
/// shorter diagonal. Both polylines must run in the same direction.
fn zip_strip(a: &[u32], b: &[u32], pts: &[Point3<f64>], tris: &mut Vec<[u32; 3]>) {
    let (mut i, mut j) = (0usize, 0usize);
    while i + 1 < a.len() || j + 1 < b.len() {
        let advance_a = if j + 1 >= b.len() {
            true
        } else if i + 1 >= a.len() {
            false
        } else {
            let da = (pts[a[i + 1] as usize] - pts[b[j] as usize]).norm();
            let db = (pts[b[j + 1] as usize] - pts[a[i] as usize]).norm();
            da <= db
        };
        if advance_a {
            tris.push([a[i], a[i + 1], b[j]]);
            i += 1;
        } else {
            tris.push([a[i], b[j + 1], b[j]]);
            j += 1;
        }
    }
}

/// Index map sending every keypoint to its mirror partner.
fn mirror_map() -> Vec<u32> {
    let mut map: Vec<u32> = (0..KEYPOINT_COUNT as u32).collect();
    let mut pair = |a: u32, b: u32| {
        map[a as usize] = b;
        map[b as usize] = a;
    };
    for k in 0..42 {
        pair(k, 42 + k);
    }
    for j in 0..6 {
        pair(roof(0, j), roof(1, j));
    }
    for k in 0..5 {
        pair(wheel(0, k), wheel(1, k));
        pair(wheel(2, k), wheel(3, k));
    }
    pair(HEADLIGHT[0], HEADLIGHT[1]);
    pair(HEADLIGHT[2], HEADLIGHT[3]);
    pair(TAILLIGHT[0], TAILLIGHT[1]);
    pair(TAILLIGHT[2], TAILLIGHT[3]);
    pair(DOOR_MIRROR[0], DOOR_MIRROR[1]);
    pair(FOG[0], FOG[1]);
    map
}

/// Builds the shared topology. The triangulation pattern is derived from a
/// representative sedan geometry and reused across the family; strips stay
/// monotone in x for every type, so the pattern remains valid.
fn build_topology() -> Topology {
    let sedan = &STYLES[2];
    let pts = build_points(sedan, sedan.dims);
    let mirror = mirror_map();

    let mut left: Vec<[u32; 3]> = Vec::new();
    for i in 0..13 {
        let (b0, b1) = (wall(0, i, 0), wall(0, i + 1, 0));
        let (r0, r1) = (wall(0, i, 1), wall(0, i + 1, 1));
        let (t0, t1) = (wall(0, i, 2), wall(0, i + 1, 2));
        left.push([b0, b1, r1]);
        left.push([b0, r1, r0]);
        left.push([r0, r1, t1]);
        left.push([r0, t1, t0]);
    }
    let belt_line: Vec<u32> = (0..14).map(|i| wall(0, i, 2)).collect();
    let mut top_inner: Vec<u32> = (0..=4).map(center).collect();
    top_inner.extend((0..6).map(|j| roof(0, j)));
    top_inner.extend((8..14).map(center));
    zip_strip(&belt_line, &top_inner, &pts, &mut left);
    let roof_line: Vec<u32> = (0..6).map(|j| roof(0, j)).collect();
    let center_cabin: Vec<u32> = CABIN_CENTER.iter().map(|&i| center(i)).collect();
    zip_strip(&roof_line, &center_cabin, &pts, &mut left);
    // Corner patches where the roof band meets the centreline.
    left.push([center(4), center(5), roof(0, 0)]);
    left.push([center(7), center(8), roof(0, 5)]);
    // End-cap fans from the bumper centre points.
    left.push([center(0), wall(0, 0, 2), wall(0, 0, 1)]);
    left.push([center(0), wall(0, 0, 1), wall(0, 0, 0)]);
    left.push([center(13), wall(0, 13, 1), wall(0, 13, 2)]);
    left.push([center(13), wall(0, 13, 0), wall(0, 13, 1)]);

    let mut mesh = left.clone();
    for t in &left {
        mesh.push([
            mirror[t[0] as usize],
            mirror[t[2] as usize],
            mirror[t[1] as usize],
        ]);
    }
    // The underbody crosses the symmetry plane; both quad diagonals are used
    // so the triangle set is its own mirror image.
    for i in 0..13 {
        let (l0, l1) = (wall(0, i, 0), wall(0, i + 1, 0));
        let (r0, r1) = (wall(1, i, 0), wall(1, i + 1, 0));
        mesh.push([l0, l1, r1]);
        mesh.push([l0, r1, r0]);
        mesh.push([l0, l1, r0]);
        mesh.push([l1, r1, r0]);
    }
    mesh.push([center(0), wall(0, 0, 0), wall(1, 0, 0)]);
    mesh.push([center(13), wall(1, 13, 0), wall(0, 13, 0)]);

    let side_edges = |side: usize| -> Vec<[u32; 2]> {
        let mut e = Vec::new();
        for i in 0..13 {
            e.push([wall(side, i, 0), wall(side, i + 1, 0)]);
            e.push([wall(side, i, 2), wall(side, i + 1, 2)]);
        }
        for j in 0..5 {
            e.push([roof(side, j), roof(side, j + 1)]);
        }
        // Pillars and end verticals.
        e.push([wall(side, 4, 2), roof(side, 0)]);
        e.push([wall(side, 8, 2), roof(side, 5)]);
        e.push([wall(side, 0, 0), wall(side, 0, 2)]);
        e.push([wall(side, 13, 0), wall(side, 13, 2)]);
        e
    };
    let cross = |station: usize, roof_station: usize| -> Vec<[u32; 2]> {
        vec![
            [wall(0, station, 0), wall(1, station, 0)],
            [wall(0, station, 1), wall(1, station, 1)],
            [wall(0, station, 2), wall(1, station, 2)],
            [roof(0, roof_station), roof(1, roof_station)],
            [wall(0, station, 0), wall(0, station, 1)],
            [wall(0, station, 1), wall(0, station, 2)],
            [wall(1, station, 0), wall(1, station, 1)],
            [wall(1, station, 1), wall(1, station, 2)],
        ]
    };
    let wireframe = [cross(13, 5), cross(0, 0), side_edges(0), side_edges(1)];

    let mut appearance: Vec<u32> = vec![center(0), center(13)];
    appearance.extend(110..KEYPOINT_COUNT as u32);

    let mut mirror_pairs: Vec<[u32; 2]> = Vec::new();
    for k in 0..KEYPOINT_COUNT as u32 {
        let m = mirror[k as usize];
        if m >= k {
            mirror_pairs.push([k, m]);
        }
    }

    Topology {
        keypoint_count: KEYPOINT_COUNT,
        mesh,
        wireframe,
        appearance,
        mirror_pairs,
    }
}

/// Offsets with exactly zero mean and unit population standard deviation.
fn standardized_offsets(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    let var = raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let sd = var.sqrt().max(1e-9);
    raw.iter().map(|v| (v - mean) / sd).collect()
}

/// Generates the 36-sample training family and its shared topology. The
/// same seed always yields the same family.
pub fn family_samples(seed: u64) -> (Vec<KeypointSet>, Topology) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Shift all type means together so the family-wide means are exact.
    let total = STYLES.iter().map(|s| s.count).sum::<usize>() as f64;
    let mut correction = [0.0; 3];
    for a in 0..3 {
        let weighted: f64 = STYLES.iter().map(|s| s.count as f64 * s.dims[a]).sum();
        correction[a] = TARGET_MEAN[a] - weighted / total;
    }
    let mut samples = Vec::with_capacity(FAMILY_SIZE);
    for style in &STYLES {
        let offsets: Vec<Vec<f64>> = (0..3)
            .map(|_| standardized_offsets(&mut rng, style.count))
            .collect();
        for ((&o0, &o1), &o2) in offsets[0].iter().zip(&offsets[1]).zip(&offsets[2]) {
            let dims = [
                style.dims[0] + correction[0] + style.sdev[0] * o0,
                style.dims[1] + correction[1] + style.sdev[1] * o1,
                style.dims[2] + correction[2] + style.sdev[2] * o2,
            ];
            samples.push(KeypointSet {
                type_label: style.vtype,
                points: build_points(style, dims),
            });
        }
    }
    (samples, build_topology())
}

/// Learns the deformable model from the default family (seed 0).
pub fn family_model(n_keep: usize) -> Result<DeformableVehicleModel> {
    let (samples, topology) = family_samples(0);
    learn_asm(&samples, n_keep, topology)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::SurfaceMesh;
    use approx::assert_relative_eq;
    use std::collections::BTreeSet;

    #[test]
    fn family_has_expected_composition() {
        let (samples, topo) = family_samples(0);
        assert_eq!(samples.len(), FAMILY_SIZE);
        assert_eq!(topo.keypoint_count, KEYPOINT_COUNT);
        assert_eq!(topo.appearance.len(), 36);
        topo.validate().unwrap();
        for s in &samples {
            assert_eq!(s.points.len(), KEYPOINT_COUNT);
        }
        for style in &STYLES {
            let n = samples.iter().filter(|s| s.type_label == style.vtype).count();
            assert_eq!(n, style.count);
        }
    }

    #[test]
    fn samples_are_exactly_symmetric() {
        let (samples, topo) = family_samples(4);
        for s in &samples {
            for p in &topo.mirror_pairs {
                let a = s.points[p[0] as usize];
                let b = s.points[p[1] as usize];
                assert_relative_eq!(a.x, b.x, epsilon = 1e-12);
                assert_relative_eq!(a.y, -b.y, epsilon = 1e-12);
                assert_relative_eq!(a.z, b.z, epsilon = 1e-12);
            }
        }
    }

    fn bbox_dims(points: &[Point3<f64>]) -> [f64; 3] {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                min[a] = min[a].min(p.coords[a]);
                max[a] = max[a].max(p.coords[a]);
            }
        }
        [max[0] - min[0], max[1] - min[1], max[2] - min[2]]
    }

    #[test]
    fn dimension_statistics_match_published_values() {
        let (samples, _) = family_samples(0);
        // Family-wide means.
        for (a, &target) in TARGET_MEAN.iter().enumerate() {
            let mean: f64 = samples.iter().map(|s| bbox_dims(&s.points)[a]).sum::<f64>()
                / samples.len() as f64;
            assert_relative_eq!(mean, target, epsilon = 1e-9);
        }
        // Per-type population standard deviations.
        for style in &STYLES {
            let dims: Vec<[f64; 3]> = samples
                .iter()
                .filter(|s| s.type_label == style.vtype)
                .map(|s| bbox_dims(&s.points))
                .collect();
            for a in 0..3 {
                let mean: f64 = dims.iter().map(|d| d[a]).sum::<f64>() / dims.len() as f64;
                let var: f64 =
                    dims.iter().map(|d| (d[a] - mean).powi(2)).sum::<f64>() / dims.len() as f64;
                assert_relative_eq!(var.sqrt(), style.sdev[a], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn footprint_is_centred_and_grounded() {
        let (samples, _) = family_samples(0);
        for s in &samples {
            let mut min = [f64::INFINITY; 3];
            let mut max = [f64::NEG_INFINITY; 3];
            for p in &s.points {
                for a in 0..3 {
                    min[a] = min[a].min(p.coords[a]);
                    max[a] = max[a].max(p.coords[a]);
                }
            }
            assert_relative_eq!(min[0], -max[0], epsilon = 1e-9);
            assert_relative_eq!(min[1], -max[1], epsilon = 1e-9);
            assert_relative_eq!(min[2], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mesh_is_mirror_symmetric() {
        let (_, topo) = family_samples(0);
        let map = mirror_map();
        let canon = |t: &[u32; 3]| -> [u32; 3] {
            let mut v = *t;
            v.sort_unstable();
            v
        };
        let tris: BTreeSet<[u32; 3]> = topo.mesh.iter().map(canon).collect();
        for t in &topo.mesh {
            let m = [
                map[t[0] as usize],
                map[t[1] as usize],
                map[t[2] as usize],
            ];
            assert!(
                tris.contains(&canon(&m)),
                "mirror of {t:?} missing from mesh"
            );
        }
        // Left and right wireframes mirror each other edge for edge.
        assert_eq!(topo.wireframe[2].len(), topo.wireframe[3].len());
        for (l, r) in topo.wireframe[2].iter().zip(&topo.wireframe[3]) {
            assert_eq!(map[l[0] as usize], r[0]);
            assert_eq!(map[l[1] as usize], r[1]);
        }
    }

    #[test]
    fn meshes_have_sane_surface_area() {
        let (samples, topo) = family_samples(0);
        for s in samples.iter().step_by(5) {
            let mesh = SurfaceMesh::new(s.points.clone(), topo.mesh.clone());
            let area: f64 = (0..topo.mesh.len()).map(|i| mesh.triangle_area(i)).sum();
            assert!(
                (15.0..80.0).contains(&area),
                "surface area {area} out of range"
            );
            for p in &s.points {
                assert!(p.coords.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn same_seed_reproduces_family() {
        let (a, _) = family_samples(7);
        let (b, _) = family_samples(7);
        let (c, _) = family_samples(8);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.serialize(), y.serialize());
        }
        let differs = a
            .iter()
            .zip(&c)
            .any(|(x, y)| x.serialize() != y.serialize());
        assert!(differs);
    }

    #[test]
    fn family_model_learns_all_types() {
        let model = family_model(3).unwrap();
        assert_eq!(model.keypoint_count, KEYPOINT_COUNT);
        assert_eq!(model.n_active, 3);
        assert!(model.n_components() >= 3);
        for t in VehicleType::ALL {
            assert!(model.mode(t).is_some(), "missing mode for {t}");
        }
        // Type modes differ from one another.
        let sedan = model.mode_gamma(VehicleType::Sedan).unwrap();
        let van = model.mode_gamma(VehicleType::Van).unwrap();
        let diff: f64 = sedan
            .iter()
            .zip(&van)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(diff > 0.1, "sedan and van modes nearly identical: {diff}");
    }
}
