//! Indexed triangle meshes, extrusion and Wavefront OBJ I/O.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::procgen::polygon::ConvexPolygon;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

/// Mass, centre of mass and inertia about the mesh origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassProperties {
    pub mass: f64,
    pub center_of_mass: Vector3<f64>,
    pub inertia_origin: Matrix3<f64>,
}

impl TriMesh {
    pub fn vertex(&self, i: u32) -> Vector3<f64> {
        Vector3::from(self.vertices[i as usize])
    }

    pub fn triangle_points(&self, t: &[u32; 3]) -> [Vector3<f64>; 3] {
        [self.vertex(t[0]), self.vertex(t[1]), self.vertex(t[2])]
    }

    pub fn triangle_normal(&self, t: &[u32; 3]) -> Vector3<f64> {
        let [a, b, c] = self.triangle_points(t);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn triangle_area(&self, t: &[u32; 3]) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Every directed edge appears exactly once and its reverse exactly once.
    pub fn check_watertight(&self) -> Result<()> {
        let mut directed: BTreeMap<(u32, u32), usize> = BTreeMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let e = (t[k], t[(k + 1) % 3]);
                if e.0 as usize >= self.vertices.len() || e.1 as usize >= self.vertices.len() {
                    return Err(Error::NotWatertight(format!("index out of range in {t:?}")));
                }
                *directed.entry(e).or_default() += 1;
            }
        }
        for (&(a, b), &count) in &directed {
            if count != 1 {
                return Err(Error::NotWatertight(format!(
                    "directed edge ({a}, {b}) used {count} times"
                )));
            }
            if !directed.contains_key(&(b, a)) {
                return Err(Error::NotWatertight(format!("edge ({a}, {b}) has no twin")));
            }
        }
        Ok(())
    }

    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = self.triangle_points(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Uniform-density mass properties scaled to `mass` (signed tetrahedra
    /// from the origin, exact for closed meshes).
    pub fn mass_properties(&self, mass: f64) -> MassProperties {
        let mut volume = 0.0;
        let mut first = Vector3::zeros();
        let mut second = Matrix3::zeros();
        for t in &self.triangles {
            let [a, b, c] = self.triangle_points(t);
            let det = a.dot(&b.cross(&c));
            volume += det / 6.0;
            first += (a + b + c) * (det / 24.0);
            let s = a + b + c;
            // ∫ x xᵀ over the tetrahedron (0, a, b, c).
            second += (a * a.transpose() + b * b.transpose() + c * c.transpose() + s * s.transpose())
                * (det / 120.0);
        }
        let density = mass / volume;
        let com = first / volume;
        let second = second * density;
        let inertia_origin = Matrix3::identity() * second.trace() - second;
        MassProperties {
            mass,
            center_of_mass: com,
            inertia_origin,
        }
    }

    /// Undirected edges whose adjacent faces are not coplanar.
    pub fn feature_edges(&self, angle_tol: f64) -> Vec<(u32, u32)> {
        let mut adjacency: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
        for (ti, t) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                adjacency.entry((a.min(b), a.max(b))).or_default().push(ti);
            }
        }
        adjacency
            .into_iter()
            .filter(|(_, faces)| {
                if faces.len() != 2 {
                    return true;
                }
                let n0 = self.triangle_normal(&self.triangles[faces[0]]);
                let n1 = self.triangle_normal(&self.triangles[faces[1]]);
                n0.dot(&n1) < (angle_tol).cos()
            })
            .map(|(e, _)| e)
            .collect()
    }

    pub fn to_obj(&self, header: &str) -> String {
        let mut s = String::new();
        for line in header.lines() {
            let _ = writeln!(s, "# {line}");
        }
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v[0], v[1], v[2]);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        s
    }

    pub fn parse_obj(text: &str, path: &Path) -> Result<TriMesh> {
        let mut mesh = TriMesh::default();
        let malformed = |line: usize, message: String| Error::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        };
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("v") => {
                    let mut v = [0.0; 3];
                    for slot in &mut v {
                        *slot = parts
                            .next()
                            .ok_or_else(|| malformed(lineno, "vertex needs 3 coordinates".into()))?
                            .parse()
                            .map_err(|e| malformed(lineno, format!("bad coordinate: {e}")))?;
                    }
                    mesh.vertices.push(v);
                }
                Some("f") => {
                    let idx: Vec<u32> = parts
                        .map(|p| {
                            let head = p.split('/').next().unwrap_or(p);
                            head.parse::<u32>()
                                .ok()
                                .filter(|&k| k >= 1)
                                .map(|k| k - 1)
                                .ok_or_else(|| malformed(lineno, format!("bad face index {p:?}")))
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() != 3 {
                        return Err(malformed(lineno, "only triangular faces are supported".into()));
                    }
                    mesh.triangles.push([idx[0], idx[1], idx[2]]);
                }
                _ => {}
            }
        }
        for (ti, t) in mesh.triangles.iter().enumerate() {
            if t.iter().any(|&k| k as usize >= mesh.vertices.len()) {
                return Err(malformed(0, format!("face {ti} references a missing vertex")));
            }
        }
        Ok(mesh)
    }

    pub fn write_obj(&self, path: &Path, header: &str) -> Result<()> {
        std::fs::write(path, self.to_obj(header)).map_err(|e| Error::io(path, e))
    }

    pub fn read_obj(path: &Path) -> Result<TriMesh> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_obj(&text, path)
    }
}

/// Extrudes a convex cross-section along +z from `z = 0` to `z = height`.
/// The bottom ring is scaled by `bottom_scale`. Faces wind outward.
pub fn extrude_tapered(section: &ConvexPolygon, height: f64, bottom_scale: f64) -> TriMesh {
    let n = section.len() as u32;
    let mut mesh = TriMesh::default();
    for v in section.vertices() {
        mesh.vertices.push([v[0] * bottom_scale, v[1] * bottom_scale, 0.0]);
    }
    for v in section.vertices() {
        mesh.vertices.push([v[0], v[1], height]);
    }
    // Bottom cap faces -z: clockwise when seen from above.
    for k in 1..n - 1 {
        mesh.triangles.push([0, k + 1, k]);
    }
    for k in 1..n - 1 {
        mesh.triangles.push([n, n + k, n + k + 1]);
    }
    for k in 0..n {
        let k1 = (k + 1) % n;
        mesh.triangles.push([k, k1, n + k1]);
        mesh.triangles.push([k, n + k1, n + k]);
    }
    mesh
}
