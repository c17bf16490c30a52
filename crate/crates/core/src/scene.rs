//! Scene description, UE grids, and image-method path tracing.
//!
//! A scene is a 2D world: base stations, convex polygonal obstacles, and a
//! rectangular UE grid. Propagation paths are the direct segment (when
//! unobstructed) plus specular reflection paths found with the image method
//! up to a configurable bounce order. No diffraction or scattering; grazing
//! contact with an obstacle counts as blocked.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    mirror_point, segment_contacts_polygon, segment_intersection_params, Point2D, Polygon,
    GEOM_TOL,
};

/// Segments of reflection paths are shrunk by this much (meters) at each end
/// before occlusion testing, so that contact at the reflection points
/// themselves does not count as blockage.
const SEG_SHRINK_M: f64 = 1e-6;

/// Rectangular UE placement grid; points are laid out row-major with x
/// varying fastest (`point = origin + (col*spacing, row*spacing)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeGrid {
    pub origin: Point2D,
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
}

/// A static 2D propagation scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub base_stations: Vec<Point2D>,
    pub obstacles: Vec<Polygon>,
    pub ue_grid: UeGrid,
    pub carrier_frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub max_reflection_order: usize,
    pub reflection_loss_db: f64,
}

/// One propagation path from a base station to a UE. Interior vertices are
/// reflection points on obstacle edges.
#[derive(Debug, Clone, PartialEq)]
pub struct RayPath {
    pub vertices: Vec<Point2D>,
    pub length_m: f64,
    pub bounce_count: usize,
}

impl RayPath {
    fn from_vertices(vertices: Vec<Point2D>) -> Self {
        debug_assert!(vertices.len() >= 2);
        let length_m = vertices.windows(2).map(|w| w[0].distance(&w[1])).sum();
        let bounce_count = vertices.len() - 2;
        Self {
            vertices,
            length_m,
            bounce_count,
        }
    }
}

impl Scene {
    /// Check all structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.base_stations.is_empty() {
            return Err(Error::InvalidScene("scene needs at least one base station".into()));
        }
        if self.ue_grid.rows < 1 || self.ue_grid.cols < 1 {
            return Err(Error::InvalidScene("UE grid needs rows >= 1 and cols >= 1".into()));
        }
        if !(self.ue_grid.spacing > 0.0) {
            return Err(Error::InvalidScene(format!(
                "UE grid spacing must be positive, got {}",
                self.ue_grid.spacing
            )));
        }
        if !(self.carrier_frequency_hz > 0.0) {
            return Err(Error::InvalidScene("carrier frequency must be positive".into()));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::InvalidScene("bandwidth must be positive".into()));
        }
        if !self.tx_power_dbm.is_finite() {
            return Err(Error::InvalidScene("tx power must be finite".into()));
        }
        if !(self.reflection_loss_db >= 0.0) {
            return Err(Error::InvalidScene("reflection loss must be non-negative".into()));
        }
        for obstacle in &self.obstacles {
            obstacle.validate()?;
        }
        for (user_id, point) in build_grid(self) {
            for (i, obstacle) in self.obstacles.iter().enumerate() {
                if obstacle.contains_strict(point, GEOM_TOL) {
                    return Err(Error::InvalidScene(format!(
                        "UE point {user_id} at ({}, {}) lies inside obstacle {i}",
                        point.x, point.y
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Scene> {
        let scene: Scene = serde_json::from_str(s)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn load(path: &std::path::Path) -> Result<Scene> {
        let text = std::fs::read_to_string(path)?;
        Scene::from_json_str(&text)
    }

    /// Built-in scenes addressable by name; `None` for unknown names.
    pub fn preset(name: &str) -> Option<Scene> {
        match name {
            "los-grid" => Some(canyon_scene(10, 99, Point2D::new(5.0, -4.5), 5e9, 100e6)),
            "los-grid-28" => Some(canyon_scene(10, 99, Point2D::new(5.0, -4.5), 28e9, 500e6)),
            "nlos-grid" => Some(corner_scene(5e9, 100e6)),
            "nlos-grid-28" => Some(corner_scene(28e9, 500e6)),
            "los-small" => Some(canyon_scene(8, 25, Point2D::new(5.0, -3.5), 5e9, 100e6)),
            "response-grid" => Some(canyon_scene(5, 37, Point2D::new(5.0, -2.0), 28e9, 500e6)),
            _ => None,
        }
    }

    pub fn preset_names() -> &'static [&'static str] {
        &[
            "los-grid",
            "los-grid-28",
            "nlos-grid",
            "nlos-grid-28",
            "los-small",
            "response-grid",
        ]
    }
}

/// Street canyon: two long walls flanking the UE grid, base station at the
/// street entrance. Every grid point sees the base station directly and gets
/// two first-order and two second-order wall reflections.
fn canyon_scene(rows: usize, cols: usize, origin: Point2D, fc: f64, bw: f64) -> Scene {
    Scene {
        base_stations: vec![Point2D::new(0.0, 0.0)],
        obstacles: vec![
            Polygon::rect(-5.0, 6.0, 120.0, 16.0),
            Polygon::rect(-5.0, -16.0, 120.0, -6.0),
        ],
        ue_grid: UeGrid {
            origin,
            rows,
            cols,
            spacing: 1.0,
        },
        carrier_frequency_hz: fc,
        bandwidth_hz: bw,
        tx_power_dbm: 0.0,
        max_reflection_order: 2,
        reflection_loss_db: 6.0,
    }
}

/// Shadowed street: a wide street with a mid-street blocker between the base
/// station and the UE grid plus an end wall behind the grid. The blocker cuts
/// every direct path; wall and end-wall reflections still reach all users.
fn corner_scene(fc: f64, bw: f64) -> Scene {
    Scene {
        base_stations: vec![Point2D::new(0.0, 0.0)],
        obstacles: vec![
            Polygon::rect(-10.0, 20.0, 130.0, 30.0),
            Polygon::rect(-10.0, -30.0, 130.0, -20.0),
            Polygon::rect(125.0, -20.0, 135.0, 20.0),
            Polygon::rect(30.0, -6.0, 34.0, 6.0),
        ],
        ue_grid: UeGrid {
            origin: Point2D::new(60.0, -4.5),
            rows: 10,
            cols: 54,
            spacing: 1.0,
        },
        carrier_frequency_hz: fc,
        bandwidth_hz: bw,
        tx_power_dbm: 0.0,
        max_reflection_order: 2,
        reflection_loss_db: 6.0,
    }
}

/// All UE positions as `(user_id, point)` in row-major order (x fastest).
pub fn build_grid(scene: &Scene) -> Vec<(usize, Point2D)> {
    let g = &scene.ue_grid;
    let mut points = Vec::with_capacity(g.rows * g.cols);
    for row in 0..g.rows {
        for col in 0..g.cols {
            let id = row * g.cols + col;
            points.push((
                id,
                Point2D::new(
                    g.origin.x + col as f64 * g.spacing,
                    g.origin.y + row as f64 * g.spacing,
                ),
            ));
        }
    }
    points
}

fn check_endpoints(scene: &Scene, bs: Point2D, ue: Point2D) -> Result<()> {
    if bs.distance(&ue) <= GEOM_TOL {
        return Err(Error::DegenerateGeometry(format!(
            "base station and UE coincide at ({}, {})",
            bs.x, bs.y
        )));
    }
    for (i, obstacle) in scene.obstacles.iter().enumerate() {
        if obstacle.contains_strict(bs, GEOM_TOL) {
            return Err(Error::DegenerateGeometry(format!(
                "base station lies inside obstacle {i}"
            )));
        }
        if obstacle.contains_strict(ue, GEOM_TOL) {
            return Err(Error::DegenerateGeometry(format!("UE lies inside obstacle {i}")));
        }
    }
    Ok(())
}

fn segment_blocked(obstacles: &[Polygon], p: Point2D, q: Point2D) -> bool {
    obstacles
        .iter()
        .any(|o| segment_contacts_polygon(p, q, o, GEOM_TOL))
}

/// Occlusion test for a reflection-path segment: both ends are pulled in by
/// [`SEG_SHRINK_M`] so legitimate contact at the reflection points is ignored.
fn segment_blocked_shrunk(obstacles: &[Polygon], p: Point2D, q: Point2D) -> bool {
    let len = p.distance(&q);
    if len <= 2.0 * SEG_SHRINK_M {
        return true; // too short to carry a physical bounce
    }
    let ux = (q.x - p.x) / len;
    let uy = (q.y - p.y) / len;
    let p2 = Point2D::new(p.x + ux * SEG_SHRINK_M, p.y + uy * SEG_SHRINK_M);
    let q2 = Point2D::new(q.x - ux * SEG_SHRINK_M, q.y - uy * SEG_SHRINK_M);
    segment_blocked(obstacles, p2, q2)
}

/// True when the straight segment between `bs` and `ue` is unobstructed.
/// Touching an obstacle vertex or running along an edge counts as blocked.
pub fn is_los(scene: &Scene, bs: Point2D, ue: Point2D) -> Result<bool> {
    check_endpoints(scene, bs, ue)?;
    Ok(!segment_blocked(&scene.obstacles, bs, ue))
}

/// All propagation paths from `bs` to `ue`: the direct path when line of
/// sight exists, plus every valid image-method reflection path with at most
/// `scene.max_reflection_order` bounces. Sorted by ascending length, ties
/// broken by lexicographic vertex comparison. Returns an empty list (not an
/// error) when no path exists.
pub fn trace_paths(scene: &Scene, bs: Point2D, ue: Point2D) -> Result<Vec<RayPath>> {
    if scene.max_reflection_order > 3 {
        return Err(Error::InvalidConfig(format!(
            "max_reflection_order must be <= 3, got {}",
            scene.max_reflection_order
        )));
    }
    check_endpoints(scene, bs, ue)?;

    let mut paths = Vec::new();
    if !segment_blocked(&scene.obstacles, bs, ue) {
        paths.push(RayPath::from_vertices(vec![bs, ue]));
    }

    let edges: Vec<(Point2D, Point2D)> = scene
        .obstacles
        .iter()
        .flat_map(|o| o.edges().collect::<Vec<_>>())
        .collect();

    let mut sequence = Vec::new();
    enumerate_sequences(
        &edges,
        scene.max_reflection_order,
        &mut sequence,
        &mut |seq| {
            if let Some(path) = build_reflection_path(scene, bs, ue, &edges, seq) {
                paths.push(path);
            }
        },
    );

    paths.sort_by(|a, b| {
        a.length_m
            .total_cmp(&b.length_m)
            .then_with(|| cmp_vertices(&a.vertices, &b.vertices))
    });
    Ok(paths)
}

fn cmp_vertices(a: &[Point2D], b: &[Point2D]) -> Ordering {
    for (p, q) in a.iter().zip(b.iter()) {
        match p.x.total_cmp(&q.x) {
            Ordering::Equal => {}
            o => return o,
        }
        match p.y.total_cmp(&q.y) {
            Ordering::Equal => {}
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Visit every ordered edge-index sequence of length 1..=max_order with no
/// two consecutive equal indices, in lexicographic order.
fn enumerate_sequences(
    edges: &[(Point2D, Point2D)],
    max_order: usize,
    sequence: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    if sequence.len() == max_order {
        return;
    }
    for i in 0..edges.len() {
        if sequence.last() == Some(&i) {
            continue;
        }
        sequence.push(i);
        visit(sequence);
        enumerate_sequences(edges, max_order, sequence, visit);
        sequence.pop();
    }
}

/// Try to realize the mirror sequence `seq` as a specular path. Returns
/// `None` when a reflection point falls off its edge, a segment is blocked,
/// or the construction degenerates.
fn build_reflection_path(
    scene: &Scene,
    bs: Point2D,
    ue: Point2D,
    edges: &[(Point2D, Point2D)],
    seq: &[usize],
) -> Option<RayPath> {
    // Forward pass: successive images of the base station.
    let mut images = Vec::with_capacity(seq.len() + 1);
    images.push(bs);
    for &ei in seq {
        let (a, b) = edges[ei];
        let last = *images.last().unwrap();
        images.push(mirror_point(last, a, b));
    }

    // Backward pass: peel off reflection points from the UE side.
    let mut rev_vertices = vec![ue];
    let mut target = ue;
    for i in (0..seq.len()).rev() {
        let (a, b) = edges[seq[i]];
        let image = images[i + 1];
        let (t, u) = segment_intersection_params(image, target, a, b)?;
        let edge_len = a.distance(&b);
        let u_tol = GEOM_TOL / edge_len;
        // Reflection point strictly inside the edge (vertex grazing rejected)
        // and strictly between the image and the next vertex.
        if !(u > u_tol && u < 1.0 - u_tol) || !(t > 1e-12 && t < 1.0 - 1e-12) {
            return None;
        }
        let reflection = Point2D::new(
            image.x + t * (target.x - image.x),
            image.y + t * (target.y - image.y),
        );
        rev_vertices.push(reflection);
        target = reflection;
    }
    rev_vertices.push(bs);
    rev_vertices.reverse();

    for w in rev_vertices.windows(2) {
        if segment_blocked_shrunk(&scene.obstacles, w[0], w[1]) {
            return None;
        }
    }
    Some(RayPath::from_vertices(rev_vertices))
}
