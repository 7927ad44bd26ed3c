//! Free-floating peg dynamics against a static module.
//!
//! The peg state is the pose of its bottom-face centre plus the world-frame
//! linear velocity of that point and the angular velocity. Per substep the
//! velocity update is linearly implicit in the actuation, the contact
//! springs/dampers and regularized friction, then the pose is advanced with
//! the new velocity (translation by Euler, rotation by the exponential map).
//! Gravity is absent and velocity-product terms are left to the tracking
//! controller.

use nalgebra::{Matrix3x6, Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::procgen::{AssemblyModule, SdfField, TriMesh};
use crate::spatial::{exp_so3, skew, Mat3, Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PegState {
    pub pose: Pose,
    pub linear_velocity: Vec3,
    pub angular_velocity: Vec3,
}

impl PegState {
    pub fn at_rest(pose: Pose) -> Self {
        Self {
            pose,
            linear_velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pose.translation.iter().all(|v| v.is_finite())
            && self.pose.rotation.iter().all(|v| v.is_finite())
            && self.linear_velocity.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
    }

    /// Applies a world-frame rigid transform to the whole state.
    pub fn transformed(&self, g: &Pose) -> Self {
        Self {
            pose: g.compose(&self.pose),
            linear_velocity: g.rotation * self.linear_velocity,
            angular_velocity: g.rotation * self.angular_velocity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaterialProps {
    pub friction_coefficient: f64,
    pub restitution: f64,
}

impl Default for MaterialProps {
    fn default() -> Self {
        Self {
            friction_coefficient: 0.5,
            restitution: 0.1,
        }
    }
}

impl MaterialProps {
    pub fn is_valid(&self) -> bool {
        (0.05..=2.0).contains(&self.friction_coefficient) && (0.0..=1.0).contains(&self.restitution)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub point: Vec3,
    pub depth: f64,
    pub normal: Vec3,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContactSet {
    pub contacts: Vec<Contact>,
}

impl ContactSet {
    pub fn max_depth(&self) -> f64 {
        self.contacts.iter().map(|c| c.depth).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConfig {
    pub substep_dt: f64,
    pub substeps: usize,
    pub mass: f64,
    /// Velocity-tracking gain, 1/s.
    pub k_v: f64,
    /// Contact stiffness, N/m.
    pub k_n: f64,
    /// Contact damping, N s/m.
    pub c_n: f64,
    pub friction_velocity: f64,
    pub contact_samples: usize,
    pub max_linear_speed: f64,
    pub max_angular_speed: f64,
    /// Penetration above which an instability diagnostic is logged.
    pub deep_penetration: f64,
    pub solver_iterations: usize,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            substep_dt: 1.0 / 200.0,
            substeps: 4,
            mass: 0.5,
            k_v: 60.0,
            k_n: 2e5,
            c_n: 300.0,
            friction_velocity: 1e-3,
            contact_samples: 256,
            max_linear_speed: 1.0,
            max_angular_speed: std::f64::consts::TAU,
            deep_penetration: 0.005,
            solver_iterations: 8,
        }
    }
}

impl PhysicsConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.substep_dt,
            self.mass,
            self.k_v,
            self.k_n,
            self.c_n,
            self.friction_velocity,
            self.max_linear_speed,
            self.max_angular_speed,
            self.deep_penetration,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig("physics constants must be positive".into()));
        }
        if self.substeps == 0 || self.contact_samples == 0 || self.solver_iterations == 0 {
            return Err(Error::InvalidConfig(
                "substeps, contact_samples and solver_iterations must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn control_period(&self) -> f64 {
        self.substep_dt * self.substeps as f64
    }
}

/// Mass properties about the bottom-centre reference point plus contact samples,
/// all in the body frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidBody {
    pub mass: f64,
    pub center_of_mass: Vec3,
    pub inertia: Mat3,
    pub samples: Vec<Vec3>,
    pub bounding_radius: f64,
}

impl RigidBody {
    /// 6x6 spatial inertia about the reference point for velocities `(v, ω)`,
    /// expressed in the world frame for body rotation `r`.
    pub fn spatial_inertia(&self, r: &Mat3) -> Matrix6<f64> {
        let c = skew(&(r * self.center_of_mass)) * self.mass;
        let inertia = r * self.inertia * r.transpose();
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Mat3::identity() * self.mass));
        m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-c));
        m.fixed_view_mut::<3, 3>(3, 0).copy_from(&c);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&inertia);
        m
    }

    pub fn kinetic_energy(&self, state: &PegState) -> f64 {
        let nu = twist(state);
        0.5 * nu.dot(&(self.spatial_inertia(&state.pose.rotation) * nu))
    }
}

pub fn make_body(peg_mesh: &TriMesh, config: &PhysicsConfig) -> Result<(PegState, RigidBody)> {
    peg_mesh.check_watertight()?;
    let props = peg_mesh.mass_properties(config.mass);
    let samples = sample_contact_points(peg_mesh, config.contact_samples);
    let bounding_radius = samples.iter().map(|p| p.norm()).fold(0.0, f64::max);
    Ok((
        PegState::at_rest(Pose::identity()),
        RigidBody {
            mass: props.mass,
            center_of_mass: props.center_of_mass,
            inertia: props.inertia_origin,
            samples,
            bounding_radius,
        },
    ))
}

fn fract(x: f64) -> f64 {
    x - x.floor()
}

/// All vertices, then points spread evenly along feature edges and over
/// faces (by area). Deterministic in the mesh.
pub fn sample_contact_points(mesh: &TriMesh, count: usize) -> Vec<Vec3> {
    let mut points: Vec<Vec3> = mesh.vertices.iter().map(|v| Vec3::from(*v)).collect();
    let remaining = count.saturating_sub(points.len());
    let n_edge = (remaining * 3).div_ceil(5);
    let n_face = remaining - n_edge;

    let edges = mesh.feature_edges(1e-6);
    let lengths: Vec<f64> = edges
        .iter()
        .map(|&(a, b)| (mesh.vertex(b) - mesh.vertex(a)).norm())
        .collect();
    let total: f64 = lengths.iter().sum();
    if n_edge > 0 && total > 0.0 {
        let spacing = total / n_edge as f64;
        let (mut edge, mut start) = (0, 0.0);
        for k in 0..n_edge {
            let s = (k as f64 + 0.5) * spacing;
            while edge + 1 < edges.len() && s > start + lengths[edge] {
                start += lengths[edge];
                edge += 1;
            }
            let (a, b) = (mesh.vertex(edges[edge].0), mesh.vertex(edges[edge].1));
            let t = ((s - start) / lengths[edge]).clamp(0.0, 1.0);
            points.push(a + (b - a) * t);
        }
    }

    let areas: Vec<f64> = mesh.triangles.iter().map(|t| mesh.triangle_area(t)).collect();
    let total: f64 = areas.iter().sum();
    if n_face > 0 && total > 0.0 {
        let spacing = total / n_face as f64;
        let (mut tri, mut start) = (0, 0.0);
        for k in 0..n_face {
            let s = (k as f64 + 0.5) * spacing;
            while tri + 1 < areas.len() && s > start + areas[tri] {
                start += areas[tri];
                tri += 1;
            }
            // R2 low-discrepancy point folded into the triangle.
            let mut u = fract(0.5 + k as f64 * 0.754_877_666_246_692_8);
            let mut v = fract(0.5 + k as f64 * 0.569_840_290_998_053_3);
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            let [a, b, c] = mesh.triangle_points(&mesh.triangles[tri]);
            points.push(a + (b - a) * u + (c - a) * v);
        }
    }
    points
}

/// A module's signed distance field placed in the world by a rigid transform.
#[derive(Debug, Clone)]
pub struct Scene {
    pub sdf: SdfField,
    pub placement: Pose,
}

impl Scene {
    pub fn new(module: &AssemblyModule) -> Self {
        Self::with_placement(module, Pose::identity())
    }

    pub fn with_placement(module: &AssemblyModule, placement: Pose) -> Self {
        Self {
            sdf: SdfField::new(module),
            placement,
        }
    }

    pub fn distance(&self, x: &Vec3) -> f64 {
        self.sdf.eval(&self.placement.inverse_transform_point(x))
    }

    pub fn distance_within(&self, x: &Vec3, limit: f64) -> Option<f64> {
        self.sdf
            .eval_within(&self.placement.inverse_transform_point(x), limit)
    }

    /// Unit outward normal from the SDF gradient.
    pub fn normal(&self, x: &Vec3) -> Vec3 {
        let g = self.sdf.gradient(&self.placement.inverse_transform_point(x));
        let n = g.norm();
        let g = if n > 1e-12 { g / n } else { Vec3::z() };
        self.placement.rotation * g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub force: Vec3,
    /// Torque about the peg reference point.
    pub torque: Vec3,
}

pub fn twist(state: &PegState) -> Vector6<f64> {
    let (v, w) = (state.linear_velocity, state.angular_velocity);
    Vector6::new(v.x, v.y, v.z, w.x, w.y, w.z)
}

/// Samples with negative signed distance, with world points and outward normals.
pub fn find_contacts(state: &PegState, scene: &Scene, samples: &[Vec3]) -> ContactSet {
    let contacts = samples
        .iter()
        .filter_map(|p| {
            let x = state.pose.transform_point(p);
            let d = scene.distance_within(&x, 0.0)?;
            Some(Contact {
                point: x,
                depth: -d,
                normal: scene.normal(&x),
            })
        })
        .collect();
    ContactSet { contacts }
}

/// Explicit penalty wrench: spring-damper normal force clamped at zero and
/// regularized Coulomb friction, accumulated about the reference point.
pub fn resolve_contacts(
    state: &PegState,
    scene: &Scene,
    samples: &[Vec3],
    material: &MaterialProps,
    config: &PhysicsConfig,
) -> Wrench {
    let contacts = find_contacts(state, scene, samples);
    let damping = config.c_n * (1.0 - material.restitution);
    let mut wrench = Wrench::default();
    for c in &contacts.contacts {
        if c.depth > config.deep_penetration {
            log::warn!("deep contact penetration {:.4} m", c.depth);
        }
        let r = c.point - state.pose.translation;
        let v = state.linear_velocity + state.angular_velocity.cross(&r);
        let vn = c.normal.dot(&v);
        let fn_ = (config.k_n * c.depth - damping * vn).max(0.0);
        let vt = v - c.normal * vn;
        let speed = vt.norm();
        let ft = -vt * (material.friction_coefficient * fn_ / speed.max(config.friction_velocity));
        let f = c.normal * fn_ + ft;
        wrench.force += f;
        wrench.torque += r.cross(&f);
    }
    wrench
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    /// Deepest sample penetration seen at the start of any substep.
    pub max_penetration: f64,
    pub contact_count: usize,
    pub deep_penetration: bool,
}

struct Candidate {
    // Signed distance at the start of the substep.
    phi: f64,
    normal: Vec3,
    // Rows of the generalized normal direction [n; r × n].
    u: Vector6<f64>,
    jacobian: Matrix3x6<f64>,
}

fn clamp_norm(v: Vec3, max: f64) -> Vec3 {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

fn substep(
    state: &PegState,
    target: &Vector6<f64>,
    body: &RigidBody,
    scene: &Scene,
    material: &MaterialProps,
    config: &PhysicsConfig,
    stats: &mut StepStats,
) -> PegState {
    let dt = config.substep_dt;
    let nu = twist(state);
    let speed = |v: &Vector6<f64>| {
        v.fixed_rows::<3>(0).norm() + v.fixed_rows::<3>(3).norm() * body.bounding_radius
    };
    // Farther samples cannot reach the surface within this substep.
    let margin = 2.0 * dt * speed(&nu).max(speed(target)) + 1e-4;

    let rot = state.pose.rotation;
    let mut candidates = Vec::new();
    for p in &body.samples {
        let r = rot * p;
        let x = state.pose.translation + r;
        if let Some(phi) = scene.distance_within(&x, margin) {
            let normal = scene.normal(&x);
            let mut jacobian = Matrix3x6::zeros();
            jacobian.fixed_view_mut::<3, 3>(0, 0).copy_from(&Mat3::identity());
            jacobian.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&r)));
            let rn = r.cross(&normal);
            candidates.push(Candidate {
                phi,
                normal,
                u: Vector6::new(normal.x, normal.y, normal.z, rn.x, rn.y, rn.z),
                jacobian,
            });
            if phi < 0.0 {
                stats.max_penetration = stats.max_penetration.max(-phi);
                stats.contact_count += 1;
            }
        }
    }

    let m = body.spatial_inertia(&rot);
    let base_lhs = m * (1.0 / dt + config.k_v);
    let base_rhs = m * (nu / dt + target * config.k_v);
    if candidates.is_empty() {
        return advance(state, &base_lhs.lu().solve(&base_rhs).unwrap_or(nu), config);
    }

    let damping = config.c_n * (1.0 - material.restitution);
    let a = config.k_n * dt + damping;
    let normal_force = |c: &Candidate, v: &Vector6<f64>| -config.k_n * c.phi - a * c.u.dot(v);
    let mut estimate = nu;
    let mut active: Vec<bool> = candidates.iter().map(|c| normal_force(c, &nu) > 0.0).collect();
    for iteration in 0..config.solver_iterations {
        let mut lhs = base_lhs;
        let mut rhs = base_rhs;
        for (c, _) in candidates.iter().zip(&active).filter(|(_, on)| **on) {
            lhs += c.u * c.u.transpose() * a;
            rhs += c.u * (-config.k_n * c.phi);
            let f = normal_force(c, &estimate).max(0.0);
            let v = c.jacobian * estimate;
            let vt = v - c.normal * c.normal.dot(&v);
            let b = material.friction_coefficient * f / vt.norm().max(config.friction_velocity);
            if b > 0.0 {
                let proj = Mat3::identity() - c.normal * c.normal.transpose();
                lhs += c.jacobian.transpose() * proj * c.jacobian * b;
            }
        }
        let solved = match lhs.cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => lhs.lu().solve(&rhs).unwrap_or(estimate),
        };
        let next: Vec<bool> = candidates.iter().map(|c| normal_force(c, &solved) > 0.0).collect();
        let settled = next == active && iteration > 0;
        estimate = solved;
        active = next;
        if settled {
            break;
        }
    }
    advance(state, &estimate, config)
}

fn advance(state: &PegState, nu: &Vector6<f64>, config: &PhysicsConfig) -> PegState {
    let dt = config.substep_dt;
    let v = clamp_norm(nu.fixed_rows::<3>(0).into_owned(), config.max_linear_speed);
    let w = clamp_norm(nu.fixed_rows::<3>(3).into_owned(), config.max_angular_speed);
    PegState {
        pose: Pose::new(
            state.pose.translation + v * dt,
            exp_so3(&(w * dt)) * state.pose.rotation,
        ),
        linear_velocity: v,
        angular_velocity: w,
    }
}

/// Advances one control period of `n_substeps` substeps toward the world-frame
/// target twist `(v, ω)`.
pub fn step_physics(
    state: &PegState,
    target: &[f64; 6],
    body: &RigidBody,
    scene: &Scene,
    material: &MaterialProps,
    config: &PhysicsConfig,
    n_substeps: usize,
) -> Result<PegState> {
    step_physics_with_stats(state, target, body, scene, material, config, n_substeps).map(|s| s.0)
}

pub fn step_physics_with_stats(
    state: &PegState,
    target: &[f64; 6],
    body: &RigidBody,
    scene: &Scene,
    material: &MaterialProps,
    config: &PhysicsConfig,
    n_substeps: usize,
) -> Result<(PegState, StepStats)> {
    let target = Vector6::from_row_slice(target);
    let mut stats = StepStats::default();
    let mut current = *state;
    for k in 0..n_substeps {
        let next = substep(&current, &target, body, scene, material, config, &mut stats);
        if !next.is_finite() {
            return Err(Error::Diverged {
                last_valid: Box::new(current),
                substeps: k,
            });
        }
        current = next;
    }
    if stats.max_penetration > config.deep_penetration {
        stats.deep_penetration = true;
        log::warn!("contact penetration {:.4} m exceeds the stability limit", stats.max_penetration);
    }
    Ok((current, stats))
}
