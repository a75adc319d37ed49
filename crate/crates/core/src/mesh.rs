//! Triangle surface meshes with exact distance and occlusion queries.
//!
//! `MeshIndex` wraps a mesh in a bounding volume hierarchy and answers two
//! queries used throughout the pipeline: the exact smallest distance from a
//! point to the surface (for the point cloud energy) and whether a segment is
//! interrupted by the surface (for visibility tests). Both are exact with
//! respect to the triangle set; the hierarchy only prunes work.

use nalgebra::{Point3, Vector3};
use rand::Rng;

/// Indexed triangle mesh. Triangle entries index into `vertices`.
#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[u32; 3]>,
}

impl SurfaceMesh {
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>) -> Self {
        SurfaceMesh {
            vertices,
            triangles,
        }
    }

    pub fn triangle(&self, i: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[i];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Draws `n` points uniformly over the surface area.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Point3<f64>> {
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for i in 0..self.triangles.len() {
            total += self.triangle_area(i);
            cumulative.push(total);
        }
        if total <= 0.0 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let pick = rng.random_range(0.0..total);
            let idx = cumulative.partition_point(|&c| c < pick);
            let [a, b, c] = self.triangle(idx.min(self.triangles.len() - 1));
            // Square-root trick keeps the barycentric draw uniform in area.
            let r1 = rng.random_range(0.0..1.0f64).sqrt();
            let r2 = rng.random_range(0.0..1.0f64);
            let p = a * (1.0 - r1) + (b.coords * (r1 * (1.0 - r2))) + (c.coords * (r1 * r2));
            out.push(p);
        }
        out
    }
}

/// Closest point on triangle `(a, b, c)` to `p` (vertex, edge or interior).
pub fn closest_point_on_triangle(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> Point3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;

    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

/// Parametric hit of the segment `orig + t * dir`, `t` in `(t_min, t_max)`,
/// against a triangle. Returns `None` when the segment misses.
pub fn segment_triangle_hit(
    orig: &Point3<f64>,
    dir: &Vector3<f64>,
    t_min: f64,
    t_max: f64,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let pv = dir.cross(&e2);
    let det = e1.dot(&pv);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let tv = orig - a;
    let u = tv.dot(&pv) * inv;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let qv = tv.cross(&e1);
    let v = dir.dot(&qv) * inv;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    let t = e2.dot(&qv) * inv;
    if t > t_min && t < t_max {
        Some(t)
    } else {
        None
    }
}

#[derive(Debug, Clone)]
struct Node {
    min: Vector3<f64>,
    max: Vector3<f64>,
    /// Leaf when `count > 0`: `start..start+count` into `tri_order`.
    start: u32,
    count: u32,
    left: u32,
    right: u32,
}

/// Bounding volume hierarchy over an owned mesh.
#[derive(Debug, Clone)]
pub struct MeshIndex {
    mesh: SurfaceMesh,
    nodes: Vec<Node>,
    tri_order: Vec<u32>,
}

const LEAF_SIZE: usize = 4;

impl MeshIndex {
    pub fn build(mesh: SurfaceMesh) -> Self {
        let n = mesh.triangles.len();
        let mut tri_order: Vec<u32> = (0..n as u32).collect();
        let centroids: Vec<Vector3<f64>> = (0..n)
            .map(|i| {
                let [a, b, c] = mesh.triangle(i);
                (a.coords + b.coords + c.coords) / 3.0
            })
            .collect();
        let mut nodes = Vec::new();
        if n > 0 {
            build_node(&mesh, &centroids, &mut tri_order, 0, n, &mut nodes);
        }
        MeshIndex {
            mesh,
            nodes,
            tri_order,
        }
    }

    pub fn mesh(&self) -> &SurfaceMesh {
        &self.mesh
    }

    /// Exact distance from `p` to the closest triangle.
    pub fn distance(&self, p: &Point3<f64>) -> f64 {
        self.closest_point(p).0
    }

    /// Exact distance and the closest surface point.
    pub fn closest_point(&self, p: &Point3<f64>) -> (f64, Point3<f64>) {
        let mut best_d2 = f64::INFINITY;
        let mut best_point = *p;
        if self.nodes.is_empty() {
            return (f64::INFINITY, best_point);
        }
        let mut stack: Vec<u32> = vec![0];
        while let Some(idx) = stack.pop() {
            let node = &self.nodes[idx as usize];
            if aabb_distance2(p, &node.min, &node.max) >= best_d2 {
                continue;
            }
            if node.count > 0 {
                for k in node.start..node.start + node.count {
                    let ti = self.tri_order[k as usize] as usize;
                    let [a, b, c] = self.mesh.triangle(ti);
                    let q = closest_point_on_triangle(p, &a, &b, &c);
                    let d2 = (p - q).norm_squared();
                    if d2 < best_d2 {
                        best_d2 = d2;
                        best_point = q;
                    }
                }
            } else {
                let (l, r) = (node.left as usize, node.right as usize);
                let dl = aabb_distance2(p, &self.nodes[l].min, &self.nodes[l].max);
                let dr = aabb_distance2(p, &self.nodes[r].min, &self.nodes[r].max);
                // Push the farther child first so the nearer is explored next.
                if dl <= dr {
                    stack.push(node.right);
                    stack.push(node.left);
                } else {
                    stack.push(node.left);
                    stack.push(node.right);
                }
            }
        }
        (best_d2.sqrt(), best_point)
    }

    /// True when any triangle intersects the open segment
    /// `orig + t * dir`, `t` in `(t_min, t_max)`.
    pub fn segment_hits(
        &self,
        orig: &Point3<f64>,
        dir: &Vector3<f64>,
        t_min: f64,
        t_max: f64,
    ) -> bool {
        if self.nodes.is_empty() {
            return false;
        }
        let inv_dir = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack: Vec<u32> = vec![0];
        while let Some(idx) = stack.pop() {
            let node = &self.nodes[idx as usize];
            if !segment_aabb_overlaps(orig, &inv_dir, t_min, t_max, &node.min, &node.max) {
                continue;
            }
            if node.count > 0 {
                for k in node.start..node.start + node.count {
                    let ti = self.tri_order[k as usize] as usize;
                    let [a, b, c] = self.mesh.triangle(ti);
                    if segment_triangle_hit(orig, dir, t_min, t_max, &a, &b, &c).is_some() {
                        return true;
                    }
                }
            } else {
                stack.push(node.left);
                stack.push(node.right);
            }
        }
        false
    }
}

fn aabb_distance2(p: &Point3<f64>, min: &Vector3<f64>, max: &Vector3<f64>) -> f64 {
    let mut d2 = 0.0;
    for i in 0..3 {
        let v = p.coords[i];
        if v < min[i] {
            d2 += (min[i] - v) * (min[i] - v);
        } else if v > max[i] {
            d2 += (v - max[i]) * (v - max[i]);
        }
    }
    d2
}

fn segment_aabb_overlaps(
    orig: &Point3<f64>,
    inv_dir: &Vector3<f64>,
    t_min: f64,
    t_max: f64,
    min: &Vector3<f64>,
    max: &Vector3<f64>,
) -> bool {
    let mut t0 = t_min;
    let mut t1 = t_max;
    for i in 0..3 {
        let inv = inv_dir[i];
        if inv.is_finite() {
            let mut a = (min[i] - orig.coords[i]) * inv;
            let mut b = (max[i] - orig.coords[i]) * inv;
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return false;
            }
        } else if orig.coords[i] < min[i] || orig.coords[i] > max[i] {
            return false;
        }
    }
    true
}

fn build_node(
    mesh: &SurfaceMesh,
    centroids: &[Vector3<f64>],
    tri_order: &mut [u32],
    start: usize,
    count: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    let mut min = Vector3::repeat(f64::INFINITY);
    let mut max = Vector3::repeat(f64::NEG_INFINITY);
    for &t in &tri_order[start..start + count] {
        let [a, b, c] = mesh.triangle(t as usize);
        for p in [a, b, c] {
            min = min.inf(&p.coords);
            max = max.sup(&p.coords);
        }
    }
    let node_idx = nodes.len() as u32;
    nodes.push(Node {
        min,
        max,
        start: start as u32,
        count: count as u32,
        left: 0,
        right: 0,
    });
    if count <= LEAF_SIZE {
        return node_idx;
    }
    let extent = max - min;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    let slice = &mut tri_order[start..start + count];
    slice.sort_by(|&a, &b| {
        centroids[a as usize][axis]
            .partial_cmp(&centroids[b as usize][axis])
            .unwrap()
            .then(a.cmp(&b))
    });
    let half = count / 2;
    let left = build_node(mesh, centroids, tri_order, start, half, nodes);
    let right = build_node(mesh, centroids, tri_order, start + half, count - half, nodes);
    let node = &mut nodes[node_idx as usize];
    node.count = 0;
    node.left = left;
    node.right = right;
    node_idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_tetra() -> SurfaceMesh {
        let vertices = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
        ];
        let triangles = vec![[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]];
        SurfaceMesh::new(vertices, triangles)
    }

    fn brute_distance(mesh: &SurfaceMesh, p: &Point3<f64>) -> f64 {
        (0..mesh.triangles.len())
            .map(|i| {
                let [a, b, c] = mesh.triangle(i);
                (p - closest_point_on_triangle(p, &a, &b, &c)).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn closest_point_regions() {
        let a = Point3::new(0.0, 0.0, 0.0);
        let b = Point3::new(2.0, 0.0, 0.0);
        let c = Point3::new(0.0, 2.0, 0.0);
        // Interior: directly above a point inside the triangle.
        let q = closest_point_on_triangle(&Point3::new(0.5, 0.5, 3.0), &a, &b, &c);
        assert!((q - Point3::new(0.5, 0.5, 0.0)).norm() < 1e-12);
        // Vertex region.
        let q = closest_point_on_triangle(&Point3::new(-1.0, -1.0, 0.0), &a, &b, &c);
        assert!((q - a).norm() < 1e-12);
        // Edge region along ab.
        let q = closest_point_on_triangle(&Point3::new(1.0, -1.0, 0.0), &a, &b, &c);
        assert!((q - Point3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        // Hypotenuse edge region.
        let q = closest_point_on_triangle(&Point3::new(2.0, 2.0, 0.0), &a, &b, &c);
        assert!((q - Point3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn query_at_vertex_is_zero() {
        let index = MeshIndex::build(unit_tetra());
        assert_eq!(index.distance(&Point3::new(1.0, 0.0, 0.0)), 0.0);
    }

    #[test]
    fn query_above_face_is_height() {
        let mesh = SurfaceMesh::new(
            vec![
                Point3::new(-1.0, -1.0, 0.0),
                Point3::new(1.0, -1.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        );
        let index = MeshIndex::build(mesh);
        let d = index.distance(&Point3::new(0.0, -0.333, 2.5));
        assert!((d - 2.5).abs() < 1e-12);
    }

    #[test]
    fn bvh_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // Random triangle soup.
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for i in 0..120u32 {
            for _ in 0..3 {
                vertices.push(Point3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                ));
            }
            triangles.push([3 * i, 3 * i + 1, 3 * i + 2]);
        }
        let mesh = SurfaceMesh::new(vertices, triangles);
        let index = MeshIndex::build(mesh.clone());
        for _ in 0..500 {
            let p = Point3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            let fast = index.distance(&p);
            let brute = brute_distance(&mesh, &p);
            assert!(
                (fast - brute).abs() <= 1e-9,
                "fast {fast} vs brute {brute}"
            );
        }
    }

    #[test]
    fn segment_occlusion() {
        let index = MeshIndex::build(unit_tetra());
        // Segment passing through the tetrahedron.
        let orig = Point3::new(-1.0, 0.2, 0.2);
        let dir = Vector3::new(2.0, 0.0, 0.0);
        assert!(index.segment_hits(&orig, &dir, 1e-9, 1.0));
        // Segment passing clear of it.
        let orig = Point3::new(-1.0, 2.0, 2.0);
        assert!(!index.segment_hits(&orig, &dir, 1e-9, 1.0));
    }

    #[test]
    fn surface_sampling_lies_on_surface() {
        let mesh = unit_tetra();
        let index = MeshIndex::build(mesh.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in mesh.sample_surface(200, &mut rng) {
            assert!(index.distance(&p) < 1e-9);
        }
    }
}
