//! Signed distance to the plate-with-cavity solid, in module coordinates.
//!
//! The plate is a box `B` minus a convex prism `C` that starts at the cavity
//! floor and extends without bound along the hole axis. Inside the material
//! `max(d_B, -d_C)` is exact. Outside it only lower-bounds the distance near
//! the opening, so positive values come from the nearest material face
//! (box faces, the perforated top face, cavity walls and the floor).

use crate::procgen::polygon::{ConvexPolygon, Point2};
use crate::procgen::AssemblyModule;
use crate::spatial::{Pose, Vec3};

pub const GRADIENT_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
struct Wall {
    start: Point2,
    dir: Point2,
    normal: Point2,
    // Trapezoid in (along-edge, along-axis) coordinates.
    profile: ConvexPolygon,
}

#[derive(Debug, Clone)]
pub struct SdfField {
    half: f64,
    thickness: f64,
    bottom: Pose,
    cavity: ConvexPolygon,
    cavity_radius: f64,
    entrance: ConvexPolygon,
    walls: Vec<Wall>,
}

fn box_sdf(p: &Vec3, half: f64, thickness: f64) -> f64 {
    let zc = -0.5 * thickness;
    let q = Vec3::new(p.x.abs() - half, p.y.abs() - half, (p.z - zc).abs() - 0.5 * thickness);
    let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
    outside + q.x.max(q.y).max(q.z).min(0.0)
}

fn rect_distance(u: f64, v: f64, u_range: [f64; 2], v_range: [f64; 2]) -> f64 {
    let du = (u_range[0] - u).max(0.0).max(u - u_range[1]);
    let dv = (v_range[0] - v).max(0.0).max(v - v_range[1]);
    du.hypot(dv)
}

impl SdfField {
    pub fn new(module: &AssemblyModule) -> Self {
        let cavity = module.cavity_section.clone();
        let n = cavity.len();
        let walls = (0..n)
            .map(|k| {
                let a = cavity.vertices()[k];
                let b = cavity.vertices()[(k + 1) % n];
                let len = (b[0] - a[0]).hypot(b[1] - a[1]);
                let dir = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
                let h0 = module.rim_heights[k];
                let h1 = module.rim_heights[(k + 1) % n];
                Wall {
                    start: a,
                    dir,
                    normal: cavity.normals()[k],
                    profile: ConvexPolygon::new(vec![[0.0, 0.0], [len, 0.0], [len, h1], [0.0, h0]])
                        .expect("wall profile is a quadrilateral"),
                }
            })
            .collect();
        Self {
            half: 0.5 * module.params.plate_side,
            thickness: module.plate_thickness,
            bottom: module.bottom_frame,
            cavity_radius: cavity.bounding_radius(),
            cavity,
            entrance: module.entrance_section.clone(),
            walls,
        }
    }

    fn local(&self, p: &Vec3) -> Vec3 {
        self.bottom.inverse_transform_point(p)
    }

    /// Exact signed distance to the open cavity prism.
    fn cavity_sdf_local(&self, q: &Vec3) -> f64 {
        let d2 = self.cavity.signed_distance([q.x, q.y]);
        let dw = -q.z;
        if d2 <= 0.0 && dw <= 0.0 {
            d2.max(dw)
        } else {
            d2.max(0.0).hypot(dw.max(0.0))
        }
    }

    /// `max(d_B, -d_C)`: exact inside material, a lower bound outside, and
    /// exact in sign everywhere.
    pub fn material_bound(&self, p: &Vec3) -> f64 {
        let db = box_sdf(p, self.half, self.thickness);
        let q = self.local(p);
        // d_C >= max(radial excess, -w); skip the polygon when it cannot win.
        let lower = (q.x.hypot(q.y) - self.cavity_radius).max(-q.z);
        if lower >= -db {
            return db;
        }
        db.max(-self.cavity_sdf_local(&q))
    }

    pub fn eval(&self, p: &Vec3) -> f64 {
        let bound = self.material_bound(p);
        if bound <= 0.0 {
            bound
        } else {
            self.exterior_distance(p)
        }
    }

    /// Signed distance only when it is below `limit`; `None` otherwise.
    pub fn eval_within(&self, p: &Vec3, limit: f64) -> Option<f64> {
        let bound = self.material_bound(p);
        if bound >= limit {
            return None;
        }
        if bound <= 0.0 {
            return Some(bound);
        }
        let d = self.exterior_distance(p);
        (d < limit).then_some(d)
    }

    /// Central-difference gradient with step [`GRADIENT_STEP`].
    pub fn gradient(&self, p: &Vec3) -> Vec3 {
        let h = GRADIENT_STEP;
        let mut g = Vec3::zeros();
        for k in 0..3 {
            let mut a = *p;
            let mut b = *p;
            a[k] += h;
            b[k] -= h;
            g[k] = (self.eval(&a) - self.eval(&b)) / (2.0 * h);
        }
        g
    }

    fn exterior_distance(&self, p: &Vec3) -> f64 {
        let db = box_sdf(p, self.half, self.thickness);
        if db > 0.0 {
            let q = Vec3::new(
                p.x.clamp(-self.half, self.half),
                p.y.clamp(-self.half, self.half),
                p.z.clamp(-self.thickness, 0.0),
            );
            if self.cavity_sdf_local(&self.local(&q)) >= 0.0 {
                return db;
            }
        }
        self.face_distance(p)
    }

    /// Minimum distance to all material faces.
    fn face_distance(&self, p: &Vec3) -> f64 {
        let (h, t) = (self.half, self.thickness);
        let mut best = f64::INFINITY;
        // Side faces and the underside.
        best = best.min((p.x - h).abs().hypot(rect_distance(p.y, p.z, [-h, h], [-t, 0.0])));
        best = best.min((p.x + h).abs().hypot(rect_distance(p.y, p.z, [-h, h], [-t, 0.0])));
        best = best.min((p.y - h).abs().hypot(rect_distance(p.x, p.z, [-h, h], [-t, 0.0])));
        best = best.min((p.y + h).abs().hypot(rect_distance(p.x, p.z, [-h, h], [-t, 0.0])));
        best = best.min((p.z + t).abs().hypot(rect_distance(p.x, p.y, [-h, h], [-h, h])));
        // Mounting surface with the opening removed.
        let xy = [p.x, p.y];
        let lateral = if p.x.abs() > h || p.y.abs() > h {
            rect_distance(p.x, p.y, [-h, h], [-h, h])
        } else if self.entrance.contains(xy) {
            self.entrance.boundary_distance(xy)
        } else {
            0.0
        };
        best = best.min(p.z.abs().hypot(lateral));
        // Floor and walls, in the bottom frame.
        let q = self.local(p);
        let uv = [q.x, q.y];
        let floor_lateral = self.cavity.signed_distance(uv).max(0.0);
        best = best.min(q.z.abs().hypot(floor_lateral));
        for wall in &self.walls {
            let du = [uv[0] - wall.start[0], uv[1] - wall.start[1]];
            let s = wall.normal[0] * du[0] + wall.normal[1] * du[1];
            if s.abs() >= best {
                continue;
            }
            let along = wall.dir[0] * du[0] + wall.dir[1] * du[1];
            let in_plane = if wall.profile.contains([along, q.z]) {
                0.0
            } else {
                wall.profile.boundary_distance([along, q.z])
            };
            best = best.min(s.hypot(in_plane));
        }
        best
    }
}
