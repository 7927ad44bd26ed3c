//! Brute-force geometric oracles shared by the integration tests. None of
//! these reuse the library's own distance code.
#![allow(dead_code)]

use peghole::procgen::{AssemblyModule, TriMesh};
use peghole::spatial::{Pose, Vec3};

pub fn v(p: [f64; 3]) -> Vec3 {
    Vec3::new(p[0], p[1], p[2])
}

pub fn tri(mesh: &TriMesh, t: &[u32; 3]) -> [Vec3; 3] {
    [v(mesh.vertices[t[0] as usize]), v(mesh.vertices[t[1] as usize]), v(mesh.vertices[t[2] as usize])]
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
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
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Unsigned distance from `p` to the mesh surface.
pub fn mesh_distance(mesh: &TriMesh, p: &Vec3) -> f64 {
    mesh.triangles
        .iter()
        .map(|t| {
            let [a, b, c] = tri(mesh, t);
            (p - closest_on_triangle(p, &a, &b, &c)).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

fn ray_hits_triangle(o: &Vec3, d: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> bool {
    let e1 = b - a;
    let e2 = c - a;
    let h = d.cross(&e2);
    let det = e1.dot(&h);
    if det.abs() < 1e-15 {
        return false;
    }
    let f = 1.0 / det;
    let s = o - a;
    let u = f * s.dot(&h);
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let q = s.cross(&e1);
    let w = f * d.dot(&q);
    if w < 0.0 || u + w > 1.0 {
        return false;
    }
    f * e2.dot(&q) > 0.0
}

/// Parity of ray crossings along an irrational-ish direction.
pub fn point_in_mesh(mesh: &TriMesh, p: &Vec3) -> bool {
    let d = Vec3::new(0.318_309_886, 0.577_215_664, 0.754_877_666).normalize();
    let hits = mesh
        .triangles
        .iter()
        .filter(|t| {
            let [a, b, c] = tri(mesh, t);
            ray_hits_triangle(p, &d, &a, &b, &c)
        })
        .count();
    hits % 2 == 1
}

/// Every vertex lies on or behind every face plane.
pub fn is_convex_mesh(mesh: &TriMesh, tol: f64) -> bool {
    mesh.triangles.iter().all(|t| {
        let [a, b, c] = tri(mesh, t);
        let n = (b - a).cross(&(c - a));
        let n = n / n.norm();
        mesh.vertices.iter().all(|q| n.dot(&(v(*q) - a)) <= tol)
    })
}

pub fn segment_distance_2d(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (abx, aby) = (b[0] - a[0], b[1] - a[1]);
    let (apx, apy) = (p[0] - a[0], p[1] - a[1]);
    let t = ((apx * abx + apy * aby) / (abx * abx + aby * aby)).clamp(0.0, 1.0);
    (apx - t * abx).hypot(apy - t * aby)
}

pub fn polygon_boundary_distance(poly: &[[f64; 2]], p: [f64; 2]) -> f64 {
    (0..poly.len())
        .map(|i| segment_distance_2d(p, poly[i], poly[(i + 1) % poly.len()]))
        .fold(f64::INFINITY, f64::min)
}

/// Winding-free inside test for a convex counter-clockwise polygon.
pub fn convex_contains(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    (0..poly.len()).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
    })
}

/// `per_edge` evenly spaced points on each polygon edge, corners included.
pub fn boundary_samples(poly: &[[f64; 2]], per_edge: usize) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        for k in 0..per_edge {
            let t = k as f64 / per_edge as f64;
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

/// Minimum over the seated peg's top outline of the distance to the cavity
/// wall, measured in the cavity cross-section plane.
pub fn min_radial_gap(module: &AssemblyModule) -> f64 {
    let peg = module.peg_section.vertices().to_vec();
    let cavity = module.cavity_section.vertices().to_vec();
    boundary_samples(&peg, 64)
        .into_iter()
        .map(|p| polygon_boundary_distance(&cavity, p))
        .fold(f64::INFINITY, f64::min)
}

/// Surface points of the peg: vertices plus points along every edge.
pub fn peg_surface_points(module: &AssemblyModule, per_edge: usize) -> Vec<Vec3> {
    let mesh = &module.peg_mesh;
    let mut pts: Vec<Vec3> = mesh.vertices.iter().map(|p| v(*p)).collect();
    for t in &mesh.triangles {
        let [a, b, c] = tri(mesh, t);
        for (p, q) in [(a, b), (b, c), (c, a)] {
            for k in 1..per_edge {
                pts.push(p + (q - p) * (k as f64 / per_edge as f64));
            }
        }
    }
    pts
}

/// Peg pose seated at depth `s` above the floor along the hole axis.
pub fn sweep_pose(module: &AssemblyModule, s: f64) -> Pose {
    let axis = module.hole_axis();
    Pose::new(module.bottom_frame.translation + axis * s, module.canonical_insert_rotation)
}
