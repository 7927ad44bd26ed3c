//! Convex 2D polygons: cross-section construction, clearance offsetting and
//! distance queries. Vertices are stored counter-clockwise.

use std::f64::consts::TAU;

pub type Point2 = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<Point2>,
    // Outward unit normal of the edge starting at each vertex.
    normals: Vec<Point2>,
    lengths: Vec<f64>,
}

fn sub(a: Point2, b: Point2) -> Point2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: Point2, b: Point2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn cross(a: Point2, b: Point2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn norm(a: Point2) -> f64 {
    a[0].hypot(a[1])
}

/// Distance from `p` to the segment `a`–`b`.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = sub(b, a);
    let ap = sub(p, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 {
        (dot(ap, ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    norm([ap[0] - t * ab[0], ap[1] - t * ab[1]])
}

impl ConvexPolygon {
    /// Builds a polygon from counter-clockwise vertices; clockwise input is
    /// reversed. Returns `None` for fewer than three vertices.
    pub fn new(mut vertices: Vec<Point2>) -> Option<Self> {
        if vertices.len() < 3 {
            return None;
        }
        if signed_area(&vertices) < 0.0 {
            vertices.reverse();
        }
        let n = vertices.len();
        let mut normals = Vec::with_capacity(n);
        let mut lengths = Vec::with_capacity(n);
        for i in 0..n {
            let e = sub(vertices[(i + 1) % n], vertices[i]);
            let l = norm(e);
            lengths.push(l);
            normals.push(if l > 0.0 { [e[1] / l, -e[0] / l] } else { [0.0, 0.0] });
        }
        Some(Self {
            vertices,
            normals,
            lengths,
        })
    }

    /// Regular polygon with the given circumradius, first vertex on +x,
    /// then scaled by `aspect_ratio` along y.
    pub fn regular(vertex_count: usize, circumradius: f64, aspect_ratio: f64) -> Option<Self> {
        let vertices = (0..vertex_count)
            .map(|k| {
                let theta = TAU * k as f64 / vertex_count as f64;
                [circumradius * theta.cos(), aspect_ratio * circumradius * theta.sin()]
            })
            .collect();
        Self::new(vertices)
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn normals(&self) -> &[Point2] {
        &self.normals
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn perimeter(&self) -> f64 {
        self.lengths.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> ConvexPolygon {
        ConvexPolygon::new(
            self.vertices
                .iter()
                .map(|v| [v[0] * factor, v[1] * factor])
                .collect(),
        )
        .expect("scaling preserves vertex count")
    }

    pub fn bounding_radius(&self) -> f64 {
        self.vertices.iter().map(|v| norm(*v)).fold(0.0, f64::max)
    }

    /// True when every turn is a left turn (strictly convex up to `tol`).
    pub fn is_convex(&self, tol: f64) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            let c = self.vertices[(i + 2) % n];
            cross(sub(b, a), sub(c, b)) >= -tol
        })
    }

    /// Largest edge-plane distance. Equals the signed distance for points
    /// inside the polygon and lower-bounds it outside.
    pub fn max_edge_distance(&self, p: Point2) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for (v, n) in self.vertices.iter().zip(&self.normals) {
            let s = n[0] * (p[0] - v[0]) + n[1] * (p[1] - v[1]);
            if s > best {
                best = s;
            }
        }
        best
    }

    /// Distance from `p` to the polygon boundary.
    pub fn boundary_distance(&self, p: Point2) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| point_segment_distance(p, self.vertices[i], self.vertices[(i + 1) % n]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Exact signed distance, negative inside.
    pub fn signed_distance(&self, p: Point2) -> f64 {
        let s = self.max_edge_distance(p);
        if s <= 0.0 {
            s
        } else {
            self.boundary_distance(p)
        }
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.max_edge_distance(p) <= 0.0
    }

    /// Outward offset by `distance` along edge normals; each corner is
    /// replaced by `arc_segments` tangent segments circumscribing the disc,
    /// so the offset boundary never comes closer than `distance`.
    pub fn offset(&self, distance: f64, arc_segments: usize) -> ConvexPolygon {
        let n = self.vertices.len();
        let k = arc_segments.max(1);
        let mut out = Vec::with_capacity(n * k);
        for i in 0..n {
            let v = self.vertices[i];
            let n_prev = self.normals[(i + n - 1) % n];
            let n_next = self.normals[i];
            let mut phi = cross(n_prev, n_next).atan2(dot(n_prev, n_next));
            if phi < 0.0 {
                phi += TAU;
            }
            let base = n_prev[1].atan2(n_prev[0]);
            for j in 0..k {
                let a0 = base + phi * j as f64 / k as f64;
                let a1 = base + phi * (j + 1) as f64 / k as f64;
                let d0 = [a0.cos(), a0.sin()];
                let d1 = [a1.cos(), a1.sin()];
                let scale = distance / (1.0 + dot(d0, d1));
                out.push([v[0] + scale * (d0[0] + d1[0]), v[1] + scale * (d0[1] + d1[1])]);
            }
        }
        ConvexPolygon::new(out).expect("offset of a polygon has at least three vertices")
    }
}

pub fn signed_area(vertices: &[Point2]) -> f64 {
    let n = vertices.len();
    0.5 * (0..n)
        .map(|i| cross(vertices[i], vertices[(i + 1) % n]))
        .sum::<f64>()
}

/// Distance from a point to a convex polygon region (zero inside).
pub fn region_distance(poly: &ConvexPolygon, p: Point2) -> f64 {
    if poly.contains(p) {
        0.0
    } else {
        poly.boundary_distance(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_area_is_two_r_squared() {
        let sq = ConvexPolygon::regular(4, 0.02, 1.0).unwrap();
        assert!((sq.area() - 8e-4).abs() < 1e-15);
    }

    #[test]
    fn clockwise_input_is_reoriented() {
        let p = ConvexPolygon::new(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(p.area() > 0.0);
        assert!(p.contains([0.5, 0.5]));
    }

    #[test]
    fn offset_edges_sit_exactly_at_distance() {
        let tri = ConvexPolygon::regular(3, 0.02, 0.5).unwrap();
        let off = tri.offset(0.001, 8);
        assert_eq!(off.len(), 24);
        assert!(off.is_convex(1e-15));
        let n = tri.len();
        for i in 0..n {
            // The straight offset edge is the segment joining the last arc point
            // of corner i to the first arc point of corner i + 1.
            let a = off.vertices()[i * 8 + 7];
            let b = off.vertices()[((i + 1) % n) * 8];
            let nrm = tri.normals()[i];
            let v = tri.vertices()[i];
            for p in [a, b] {
                let s = nrm[0] * (p[0] - v[0]) + nrm[1] * (p[1] - v[1]);
                assert!((s - 0.001).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn signed_distance_square() {
        let sq = ConvexPolygon::new(vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]).unwrap();
        assert!((sq.signed_distance([0.0, 0.0]) + 1.0).abs() < 1e-15);
        assert!((sq.signed_distance([2.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!((sq.signed_distance([2.0, 2.0]) - 2f64.sqrt()).abs() < 1e-15);
    }
}
