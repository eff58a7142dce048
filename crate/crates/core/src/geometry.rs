//! Triangle meshes, 2D convex hulls and a handful of analytic test solids.
//!
//! Coordinates are centimetres with Y vertical and Z pointing toward the camera.

use serde::{Deserialize, Serialize};

pub type Point3 = [f64; 3];
pub type Point2 = [f64; 2];

/// Indexed triangle mesh.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty() || self.faces.is_empty()
    }

    /// Returns `(min, max)` corners, or `None` for a mesh without vertices.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.vertices.first()?;
        let mut lo = first;
        let mut hi = first;
        for v in &self.vertices[1..] {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        Some((lo, hi))
    }

    pub fn faces_valid(&self) -> bool {
        let n = self.vertices.len() as u32;
        self.faces.iter().all(|f| f.iter().all(|&i| i < n))
    }

    /// Appends `other`, re-indexing its faces.
    pub fn append(&mut self, other: &TriMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
    }

    pub fn translated(&self, offset: Point3) -> TriMesh {
        TriMesh {
            vertices: self
                .vertices
                .iter()
                .map(|v| [v[0] + offset[0], v[1] + offset[1], v[2] + offset[2]])
                .collect(),
            faces: self.faces.clone(),
        }
    }

    pub fn scaled(&self, factor: f64) -> TriMesh {
        TriMesh {
            vertices: self
                .vertices
                .iter()
                .map(|v| [v[0] * factor, v[1] * factor, v[2] * factor])
                .collect(),
            faces: self.faces.clone(),
        }
    }

    /// Wavefront OBJ text (1-based indices).
    pub fn to_obj(&self) -> String {
        let mut out = String::with_capacity(self.vertices.len() * 32 + self.faces.len() * 24);
        for v in &self.vertices {
            out.push_str(&format!("v {:.6} {:.6} {:.6}\n", v[0], v[1], v[2]));
        }
        for f in &self.faces {
            out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
        }
        out
    }
}

pub fn distance3(a: Point3, b: Point3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Convex hull by Andrew's monotone chain, counter-clockwise, without
/// collinear points.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }

    let mut hull: Vec<Point2> = Vec::with_capacity(pts.len() + 1);
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
        {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Length of the closed polyline through `ring`.
pub fn closed_perimeter(ring: &[Point2]) -> f64 {
    match ring.len() {
        0 | 1 => 0.0,
        n => (0..n)
            .map(|i| {
                let a = ring[i];
                let b = ring[(i + 1) % n];
                (b[0] - a[0]).hypot(b[1] - a[1])
            })
            .sum(),
    }
}

pub fn hull_perimeter(points: &[Point2]) -> f64 {
    closed_perimeter(&convex_hull(points))
}

/// Analytic solids used to check the measurement and rendering code.
pub mod shapes {
    use super::TriMesh;
    use std::f64::consts::TAU;

    /// Vertical surface of revolution sampled at `levels` (y, radius) pairs,
    /// closed with caps at both ends.
    pub fn lathe(levels: &[(f64, f64)], segments: usize) -> TriMesh {
        let mut mesh = TriMesh::new();
        for &(y, r) in levels {
            for i in 0..segments {
                let t = TAU * i as f64 / segments as f64;
                mesh.vertices.push([r * t.cos(), y, r * t.sin()]);
            }
        }
        let s = segments as u32;
        for k in 0..levels.len().saturating_sub(1) as u32 {
            for i in 0..s {
                let j = (i + 1) % s;
                let (a, b, c, d) = (k * s + i, k * s + j, (k + 1) * s + j, (k + 1) * s + i);
                mesh.faces.push([a, c, b]);
                mesh.faces.push([a, d, c]);
            }
        }
        if let (Some(&(y0, _)), Some(&(y1, _))) = (levels.first(), levels.last()) {
            let bottom = mesh.vertices.len() as u32;
            mesh.vertices.push([0.0, y0, 0.0]);
            let top = bottom + 1;
            mesh.vertices.push([0.0, y1, 0.0]);
            let last = (levels.len() as u32 - 1) * s;
            for i in 0..s {
                let j = (i + 1) % s;
                mesh.faces.push([bottom, i, j]);
                mesh.faces.push([top, last + j, last + i]);
            }
        }
        mesh
    }

    pub fn cylinder(radius: f64, y0: f64, y1: f64, segments: usize) -> TriMesh {
        lathe(&[(y0, radius), (y1, radius)], segments)
    }

    pub fn frustum(r0: f64, r1: f64, y0: f64, y1: f64, segments: usize) -> TriMesh {
        lathe(&[(y0, r0), (y1, r1)], segments)
    }

    /// Axis-aligned square prism of the given side, spanning `y0..y1`.
    pub fn square_prism(side: f64, y0: f64, y1: f64) -> TriMesh {
        let h = side / 2.0;
        let corners = [[-h, -h], [h, -h], [h, h], [-h, h]];
        let mut mesh = TriMesh::new();
        for y in [y0, y1] {
            for c in corners {
                mesh.vertices.push([c[0], y, c[1]]);
            }
        }
        for i in 0..4u32 {
            let j = (i + 1) % 4;
            mesh.faces.push([i, 4 + j, j]);
            mesh.faces.push([i, 4 + i, 4 + j]);
        }
        mesh.faces.extend([[0, 1, 2], [0, 2, 3], [4, 6, 5], [4, 7, 6]]);
        mesh
    }

    /// UV sphere centred at `center`.
    pub fn sphere(center: [f64; 3], radius: f64, segments: usize, stacks: usize) -> TriMesh {
        let levels: Vec<(f64, f64)> = (1..stacks)
            .map(|k| {
                let phi = std::f64::consts::PI * k as f64 / stacks as f64;
                (-radius * phi.cos(), radius * phi.sin())
            })
            .collect();
        let mut mesh = lathe(&levels, segments);
        // Pull the cap centres out to the poles.
        let n = mesh.vertices.len();
        mesh.vertices[n - 2][1] = -radius;
        mesh.vertices[n - 1][1] = radius;
        mesh.translated(center)
    }
}
