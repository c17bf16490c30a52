//! 2D geometric primitives: points, convex polygons, and the contact
//! predicates used by line-of-sight and reflection-path checks.
//!
//! All contact tests use an absolute tolerance of [`GEOM_TOL`] meters.
//! Touching an obstacle vertex or running along an edge counts as contact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute geometric tolerance in meters for contact and containment tests.
pub const GEOM_TOL: f64 = 1e-9;

/// A point in the scene plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Cross product of (a-o) and (b-o).
#[inline]
fn cross(o: Point2D, a: Point2D, b: Point2D) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// A convex polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<Point2D>,
}

impl Polygon {
    /// Build and validate (>= 3 vertices, positive area, convex, CCW).
    pub fn new(vertices: Vec<Point2D>) -> Result<Self> {
        let p = Self { vertices };
        p.validate()?;
        Ok(p)
    }

    /// Axis-aligned rectangle with `x0 < x1`, `y0 < y1`.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            vertices: vec![
                Point2D::new(x0, y0),
                Point2D::new(x1, y0),
                Point2D::new(x1, y1),
                Point2D::new(x0, y1),
            ],
        }
    }

    /// Signed area (positive for CCW vertex order).
    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        let mut acc = 0.0;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            acc += a.x * b.y - b.x * a.y;
        }
        acc / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if n < 3 {
            return Err(Error::InvalidScene(format!(
                "polygon needs at least 3 vertices, got {n}"
            )));
        }
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if a.distance(&b) <= GEOM_TOL {
                return Err(Error::InvalidScene(format!(
                    "polygon has coincident consecutive vertices at index {i}"
                )));
            }
            if !a.x.is_finite() || !a.y.is_finite() {
                return Err(Error::InvalidScene("polygon vertex is not finite".into()));
            }
        }
        let area = self.signed_area();
        if area <= GEOM_TOL * GEOM_TOL {
            return Err(Error::InvalidScene(format!(
                "polygon must have positive area with CCW vertices (signed area {area})"
            )));
        }
        // Convexity: every turn is a left turn (collinear vertices allowed).
        for i in 0..n {
            let c = cross(
                self.vertices[i],
                self.vertices[(i + 1) % n],
                self.vertices[(i + 2) % n],
            );
            if c < -GEOM_TOL {
                return Err(Error::InvalidScene(format!(
                    "polygon is not convex/CCW at vertex {}",
                    (i + 1) % n
                )));
            }
        }
        Ok(())
    }

    /// Edges as (start, end) pairs in CCW order.
    pub fn edges(&self) -> impl Iterator<Item = (Point2D, Point2D)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// True when `p` is inside with clearance greater than `tol` from every
    /// edge line. Boundary points (within `tol`) are not "strictly inside".
    pub fn contains_strict(&self, p: Point2D, tol: f64) -> bool {
        self.edges().all(|(a, b)| {
            let len = a.distance(&b);
            cross(a, b, p) / len > tol
        })
    }
}

/// Distance from point `p` to segment `a`-`b`.
pub fn point_segment_distance(p: Point2D, a: Point2D, b: Point2D) -> f64 {
    let abx = b.x - a.x;
    let aby = b.y - a.y;
    let len2 = abx * abx + aby * aby;
    if len2 == 0.0 {
        return p.distance(&a);
    }
    let t = ((p.x - a.x) * abx + (p.y - a.y) * aby) / len2;
    let t = t.clamp(0.0, 1.0);
    let proj = Point2D::new(a.x + t * abx, a.y + t * aby);
    p.distance(&proj)
}

fn segments_properly_cross(p1: Point2D, q1: Point2D, p2: Point2D, q2: Point2D) -> bool {
    let o1 = cross(p1, q1, p2);
    let o2 = cross(p1, q1, q2);
    let o3 = cross(p2, q2, p1);
    let o4 = cross(p2, q2, q1);
    (o1 > 0.0) != (o2 > 0.0)
        && (o3 > 0.0) != (o4 > 0.0)
        && o1 != 0.0
        && o2 != 0.0
        && o3 != 0.0
        && o4 != 0.0
}

/// Minimum distance between two segments (0 when they cross).
pub fn segment_segment_distance(p1: Point2D, q1: Point2D, p2: Point2D, q2: Point2D) -> f64 {
    if segments_properly_cross(p1, q1, p2, q2) {
        return 0.0;
    }
    point_segment_distance(p1, p2, q2)
        .min(point_segment_distance(q1, p2, q2))
        .min(point_segment_distance(p2, p1, q1))
        .min(point_segment_distance(q2, p1, q1))
}

/// True when segment `p`-`q` touches or enters the polygon: an endpoint is
/// strictly inside, or the segment comes within `tol` of any edge (grazing a
/// vertex or running along an edge counts as contact).
pub fn segment_contacts_polygon(p: Point2D, q: Point2D, poly: &Polygon, tol: f64) -> bool {
    if poly.contains_strict(p, tol) || poly.contains_strict(q, tol) {
        return true;
    }
    poly.edges()
        .any(|(a, b)| segment_segment_distance(p, q, a, b) <= tol)
}

/// Reflect `p` across the infinite line through `a` and `b`.
pub fn mirror_point(p: Point2D, a: Point2D, b: Point2D) -> Point2D {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let len2 = dx * dx + dy * dy;
    let t = ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2;
    let proj = Point2D::new(a.x + t * dx, a.y + t * dy);
    Point2D::new(2.0 * proj.x - p.x, 2.0 * proj.y - p.y)
}

/// Intersection of segment `p1`-`p2` with segment `a`-`b` as parameters
/// `(t, u)` along each; `None` for (near-)parallel lines.
pub fn segment_intersection_params(
    p1: Point2D,
    p2: Point2D,
    a: Point2D,
    b: Point2D,
) -> Option<(f64, f64)> {
    let r = (p2.x - p1.x, p2.y - p1.y);
    let s = (b.x - a.x, b.y - a.y);
    let denom = r.0 * s.1 - r.1 * s.0;
    if denom.abs() < 1e-15 {
        return None;
    }
    let qp = (a.x - p1.x, a.y - p1.y);
    let t = (qp.0 * s.1 - qp.1 * s.0) / denom;
    let u = (qp.0 * r.1 - qp.1 * r.0) / denom;
    Some((t, u))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_is_valid_ccw() {
        let r = Polygon::rect(0.0, 0.0, 2.0, 1.0);
        assert!(r.validate().is_ok());
        assert!((r.signed_area() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn clockwise_polygon_rejected() {
        let p = Polygon {
            vertices: vec![
                Point2D::new(0.0, 0.0),
                Point2D::new(0.0, 1.0),
                Point2D::new(1.0, 1.0),
                Point2D::new(1.0, 0.0),
            ],
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn non_convex_rejected() {
        let p = Polygon {
            vertices: vec![
                Point2D::new(0.0, 0.0),
                Point2D::new(2.0, 0.0),
                Point2D::new(1.0, 0.2), // dent
                Point2D::new(2.0, 2.0),
                Point2D::new(0.0, 2.0),
            ],
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn containment_is_strict() {
        let r = Polygon::rect(0.0, 0.0, 2.0, 2.0);
        assert!(r.contains_strict(Point2D::new(1.0, 1.0), GEOM_TOL));
        // On the boundary: not strictly inside.
        assert!(!r.contains_strict(Point2D::new(0.0, 1.0), GEOM_TOL));
        assert!(!r.contains_strict(Point2D::new(3.0, 1.0), GEOM_TOL));
    }

    #[test]
    fn segment_contact_crossing_and_grazing() {
        let r = Polygon::rect(9.0, -1.0, 11.0, 1.0);
        // Straight through the middle.
        assert!(segment_contacts_polygon(
            Point2D::new(0.0, 0.0),
            Point2D::new(20.0, 0.0),
            &r,
            GEOM_TOL
        ));
        // Misses entirely.
        assert!(!segment_contacts_polygon(
            Point2D::new(0.0, 0.0),
            Point2D::new(0.0, 5.0),
            &r,
            GEOM_TOL
        ));
        // Grazing a corner counts as contact.
        assert!(segment_contacts_polygon(
            Point2D::new(0.0, 1.0),
            Point2D::new(20.0, 1.0),
            &r,
            GEOM_TOL
        ));
        // Running along an edge counts as contact.
        assert!(segment_contacts_polygon(
            Point2D::new(9.0, -5.0),
            Point2D::new(9.0, 5.0),
            &r,
            GEOM_TOL
        ));
    }

    #[test]
    fn mirror_across_vertical_line() {
        let m = mirror_point(
            Point2D::new(0.0, 0.0),
            Point2D::new(10.0, -50.0),
            Point2D::new(10.0, 50.0),
        );
        assert!((m.x - 20.0).abs() < 1e-12);
        assert!(m.y.abs() < 1e-12);
    }

    #[test]
    fn intersection_params() {
        let (t, u) = segment_intersection_params(
            Point2D::new(0.0, 0.0),
            Point2D::new(2.0, 2.0),
            Point2D::new(0.0, 2.0),
            Point2D::new(2.0, 0.0),
        )
        .unwrap();
        assert!((t - 0.5).abs() < 1e-12);
        assert!((u - 0.5).abs() < 1e-12);
    }
}
