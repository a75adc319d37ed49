//! Exact overlap between convex polygons and axis-aligned cells, used to
//! weight grid occupancy by how much of a vehicle footprint covers a cell.

use nalgebra::Vector2;

/// Clips a convex polygon against an axis-aligned rectangle, one half-plane
/// at a time. Vertices must be in consistent winding order.
pub fn clip_to_rect(
    poly: &[Vector2<f64>],
    lo: &Vector2<f64>,
    hi: &Vector2<f64>,
) -> Vec<Vector2<f64>> {
    let mut cur: Vec<Vector2<f64>> = poly.to_vec();
    for pass in 0..4 {
        if cur.is_empty() {
            break;
        }
        let next = clip_half_plane(&cur, pass, lo, hi);
        cur = next;
    }
    cur
}

fn clip_half_plane(
    poly: &[Vector2<f64>],
    pass: usize,
    lo: &Vector2<f64>,
    hi: &Vector2<f64>,
) -> Vec<Vector2<f64>> {
    let (axis, bound, keep_below) = match pass {
        0 => (0, lo.x, false),
        1 => (0, hi.x, true),
        2 => (1, lo.y, false),
        _ => (1, hi.y, true),
    };
    let inside = |p: &Vector2<f64>| {
        if keep_below {
            p[axis] <= bound
        } else {
            p[axis] >= bound
        }
    };
    let mut out = Vec::with_capacity(poly.len() + 4);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let ia = inside(&a);
        if ia {
            out.push(a);
        }
        if ia != inside(&b) {
            let t = (bound - a[axis]) / (b[axis] - a[axis]);
            out.push(a + (b - a) * t);
        }
    }
    out
}

/// Unsigned polygon area by the shoelace formula.
pub fn polygon_area(poly: &[Vector2<f64>]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        twice += a.x * b.y - b.x * a.y;
    }
    0.5 * twice.abs()
}

/// Overlap area between a convex polygon and the cell `[lo, hi]`.
pub fn overlap_area(poly: &[Vector2<f64>], lo: &Vector2<f64>, hi: &Vector2<f64>) -> f64 {
    polygon_area(&clip_to_rect(poly, lo, hi))
}

/// Corners of a rectangle of the given size, rotated by `theta_deg` and
/// centered on `center`, in counterclockwise order.
pub fn rect_corners(
    center: &Vector2<f64>,
    theta_deg: f64,
    length: f64,
    width: f64,
) -> [Vector2<f64>; 4] {
    let (s, c) = theta_deg.to_radians().sin_cos();
    let rot = |x: f64, y: f64| {
        Vector2::new(center.x + c * x - s * y, center.y + s * x + c * y)
    };
    let (hl, hw) = (0.5 * length, 0.5 * width);
    [
        rot(hl, hw),
        rot(-hl, hw),
        rot(-hl, -hw),
        rot(hl, -hw),
    ]
}
