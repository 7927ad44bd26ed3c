//! Procedural peg-in-hole modules.
//!
//! A module is a square plate whose top (mounting) surface lies at `z = 0` and a
//! convex peg. The cavity is the peg's top cross-section inflated by the
//! clearance and swept along the (possibly tilted) hole axis down to a flat
//! floor. The peg body frame has its origin at the centre of the peg's bottom
//! face and `+z` pointing from bottom to top; when seated it coincides with
//! the module's bottom frame.

pub mod export;
pub mod mesh;
pub mod polygon;
pub mod sdf;

use std::f64::consts::TAU;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{rot_x, rot_y, rot_z, Mat3, Pose, Vec3};

pub use mesh::TriMesh;
pub use polygon::ConvexPolygon;
pub use sdf::SdfField;

/// Corner arcs of the clearance offset are replaced by this many tangent segments.
pub const CLEARANCE_ARC_SEGMENTS: usize = 8;
/// Minimum height of the cavity wall above the floor at every corner.
pub const MIN_WALL_HEIGHT: f64 = 0.001;
const MIN_SECTION_AREA: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    /// Inclusive range of polygon vertex counts.
    pub polygon_vertices: [usize; 2],
    /// Vertex count used for near-circular sections.
    pub circle_vertices: usize,
    /// Probability of drawing a near-circular section.
    pub circle_probability: f64,
    pub circumradius: [f64; 2],
    pub aspect_ratio: [f64; 2],
    pub peg_height: [f64; 2],
    pub tapering: [f64; 2],
    pub hole_depth_fraction: [f64; 2],
    /// Tilt range about each of the plate's x and y axes, degrees.
    pub hole_tilt_deg: [f64; 2],
    pub clearance: f64,
    pub plate_side: f64,
    /// Minimum distance between the cavity footprint and the plate edge.
    pub plate_margin: f64,
    /// Material kept below the deepest point of the cavity floor.
    pub plate_backing: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            polygon_vertices: [3, 8],
            circle_vertices: 32,
            circle_probability: 0.25,
            circumradius: [0.01, 0.03],
            aspect_ratio: [0.25, 1.0],
            peg_height: [0.025, 0.15],
            tapering: [0.0, 0.25],
            hole_depth_fraction: [0.40, 0.80],
            hole_tilt_deg: [-15.0, 15.0],
            clearance: 0.001,
            plate_side: 0.15,
            plate_margin: 0.01,
            plate_backing: 0.01,
        }
    }
}

impl GenConfig {
    /// Circular pegs only with a 3 mm clearance; used for learner smoke runs.
    pub fn easy() -> Self {
        Self {
            circle_probability: 1.0,
            clearance: 0.003,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        let range_ok = |r: [f64; 2], lo: f64, hi: f64| r[0] <= r[1] && r[0] >= lo && r[1] <= hi;
        if self.polygon_vertices[0] < 3 || self.polygon_vertices[0] > self.polygon_vertices[1] {
            return bad("polygon_vertices must be a range starting at 3 or more");
        }
        if self.circle_vertices < 3 {
            return bad("circle_vertices must be at least 3");
        }
        if !(0.0..=1.0).contains(&self.circle_probability) {
            return bad("circle_probability must lie in [0, 1]");
        }
        if !range_ok(self.circumradius, 1e-4, 1.0) {
            return bad("circumradius range must be non-empty and positive");
        }
        if !range_ok(self.aspect_ratio, 1e-3, 1.0) {
            return bad("aspect_ratio range must lie in (0, 1]");
        }
        if !range_ok(self.peg_height, 1e-3, 2.0) {
            return bad("peg_height range must be non-empty and positive");
        }
        if !range_ok(self.tapering, 0.0, 0.95) {
            return bad("tapering range must lie in [0, 0.95]");
        }
        if !range_ok(self.hole_depth_fraction, 0.01, 1.0) {
            return bad("hole_depth_fraction must lie in (0, 1]");
        }
        if !range_ok(self.hole_tilt_deg, -60.0, 60.0) {
            return bad("hole_tilt_deg range must lie within [-60, 60]");
        }
        if !(self.clearance > 0.0 && self.clearance.is_finite()) {
            return bad("clearance must be positive");
        }
        if !(self.plate_side > 0.0 && self.plate_margin >= 0.0 && self.plate_backing > 0.0) {
            return bad("plate dimensions must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleParams {
    pub seed: u64,
    pub vertex_count: usize,
    pub circumradius: f64,
    pub aspect_ratio: f64,
    pub peg_height: f64,
    pub tapering: f64,
    pub hole_depth_fraction: f64,
    /// Rotations about the plate x and y axes, radians.
    pub hole_tilt: [f64; 2],
    /// Rotation of the cross-section about the hole axis, radians.
    pub hole_yaw: f64,
    /// Entrance centre on the mounting surface, meters.
    pub hole_position: [f64; 2],
    pub clearance: f64,
    pub plate_side: f64,
    pub plate_margin: f64,
    pub plate_backing: f64,
}

impl ModuleParams {
    pub fn hole_depth(&self) -> f64 {
        self.hole_depth_fraction * self.peg_height
    }

    /// Deepest point of the cavity floor plus the backing; for an untilted
    /// hole this is `hole_depth + plate_backing`.
    pub fn plate_thickness(&self) -> f64 {
        let deepest = match self.cross_section() {
            Ok(section) => cavity_depth(&cavity_shape(self, &section)),
            Err(_) => self.hole_depth(),
        };
        deepest.max(self.hole_depth()) + self.plate_backing
    }

    pub fn cross_section(&self) -> Result<ConvexPolygon> {
        let section = ConvexPolygon::regular(self.vertex_count, self.circumradius, self.aspect_ratio)
            .ok_or(Error::DegenerateCrossSection { area: 0.0 })?;
        let area = section.area();
        if !(area >= MIN_SECTION_AREA) {
            return Err(Error::DegenerateCrossSection { area });
        }
        Ok(section)
    }

    /// Rotation of the bottom frame (and of the seated peg).
    pub fn hole_rotation(&self) -> Mat3 {
        rot_x(self.hole_tilt[0]) * rot_y(self.hole_tilt[1]) * rot_z(self.hole_yaw)
    }

    pub fn hole_axis(&self) -> Vec3 {
        rot_x(self.hole_tilt[0]) * rot_y(self.hole_tilt[1]) * Vec3::z()
    }
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

/// Points of the cavity relative to the entrance centre: rim (on `z = 0`)
/// and floor, in the same corner order as `cavity`.
struct CavityShape {
    cavity: ConvexPolygon,
    rim: Vec<Vec3>,
    floor: Vec<Vec3>,
    rim_heights: Vec<f64>,
}

fn cavity_shape(params: &ModuleParams, section: &ConvexPolygon) -> CavityShape {
    let cavity = section.offset(params.clearance, CLEARANCE_ARC_SEGMENTS);
    let rot = params.hole_rotation();
    let axis = params.hole_axis();
    let bottom = -axis * params.hole_depth();
    let mut rim = Vec::with_capacity(cavity.len());
    let mut floor = Vec::with_capacity(cavity.len());
    let mut rim_heights = Vec::with_capacity(cavity.len());
    for q in cavity.vertices() {
        let p0 = bottom + rot * Vec3::new(q[0], q[1], 0.0);
        let w = -p0.z / axis.z;
        floor.push(p0);
        rim.push(p0 + axis * w);
        rim_heights.push(w);
    }
    CavityShape {
        cavity,
        rim,
        floor,
        rim_heights,
    }
}

fn cavity_depth(shape: &CavityShape) -> f64 {
    -shape.floor.iter().map(|p| p.z).fold(0.0, f64::min)
}

fn footprint_extent(shape: &CavityShape) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in shape.rim.iter().chain(&shape.floor) {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

/// Draws one module's parameters. Deterministic in `seed`.
pub fn sample_module_params(config: &GenConfig, seed: u64) -> ModuleParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vertex_count = if rng.random_bool(config.circle_probability) {
        config.circle_vertices
    } else {
        rng.random_range(config.polygon_vertices[0]..=config.polygon_vertices[1])
    };
    let circumradius = uniform(&mut rng, config.circumradius);
    let aspect_ratio = uniform(&mut rng, config.aspect_ratio);
    let peg_height = uniform(&mut rng, config.peg_height);
    let tapering = uniform(&mut rng, config.tapering);
    let hole_depth_fraction = uniform(&mut rng, config.hole_depth_fraction);
    let tilt = [
        uniform(&mut rng, config.hole_tilt_deg).to_radians(),
        uniform(&mut rng, config.hole_tilt_deg).to_radians(),
    ];
    let hole_yaw = rng.random_range(0.0..TAU);
    let mut params = ModuleParams {
        seed,
        vertex_count,
        circumradius,
        aspect_ratio,
        peg_height,
        tapering,
        hole_depth_fraction,
        hole_tilt: tilt,
        hole_yaw,
        hole_position: [0.0, 0.0],
        clearance: config.clearance,
        plate_side: config.plate_side,
        plate_margin: config.plate_margin,
        plate_backing: config.plate_backing,
    };
    // Position keeps the inflated, tilted footprint `plate_margin` inside the edge.
    let half = 0.5 * config.plate_side - config.plate_margin;
    let mut position = [0.0; 2];
    if let Ok(section) = params.cross_section() {
        let (lo, hi) = footprint_extent(&cavity_shape(&params, &section));
        for k in 0..2 {
            let (min, max) = (-half - lo[k], half - hi[k]);
            position[k] = if max > min {
                rng.random_range(min..max)
            } else {
                0.5 * (min + max)
            };
        }
    }
    params.hole_position = position;
    params
}

#[derive(Debug, Clone)]
pub struct AssemblyModule {
    pub params: ModuleParams,
    pub peg_mesh: TriMesh,
    pub plate_mesh: TriMesh,
    pub entrance_frame: Pose,
    pub bottom_frame: Pose,
    pub canonical_insert_rotation: Mat3,
    pub hole_depth: f64,
    pub plate_thickness: f64,
    /// Peg top (untapered) cross-section in the peg frame.
    pub peg_section: ConvexPolygon,
    /// Cavity cross-section in the bottom frame.
    pub cavity_section: ConvexPolygon,
    /// Opening of the cavity on the mounting surface, world xy.
    pub entrance_section: ConvexPolygon,
    /// Height of the cavity rim above the floor at each cavity corner.
    pub rim_heights: Vec<f64>,
}

impl AssemblyModule {
    pub fn hole_axis(&self) -> Vec3 {
        self.bottom_frame.rotation.column(2).into_owned()
    }
}

/// Peg solid in its body frame: bottom face at `z = 0`, top face at the peg height.
pub fn build_peg(params: &ModuleParams) -> Result<TriMesh> {
    let section = params.cross_section()?;
    Ok(mesh::extrude_tapered(&section, params.peg_height, 1.0 - params.tapering))
}

pub fn build_module(params: &ModuleParams) -> Result<AssemblyModule> {
    let section = params.cross_section()?;
    let peg_mesh = mesh::extrude_tapered(&section, params.peg_height, 1.0 - params.tapering);
    let shape = cavity_shape(params, &section);
    let depth = params.hole_depth();
    let thickness = params.plate_thickness();
    let half = 0.5 * params.plate_side;
    let entrance = Vec3::new(params.hole_position[0], params.hole_position[1], 0.0);

    let min_rim = shape.rim_heights.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min_rim >= MIN_WALL_HEIGHT) {
        return Err(Error::FootprintOverflow(format!(
            "cavity floor rises to within {min_rim:.4} m of the mounting surface"
        )));
    }
    let (lo, hi) = footprint_extent(&shape);
    let limit = half - params.plate_margin + 1e-12;
    for k in 0..2 {
        let (a, b) = (entrance[k] + lo[k], entrance[k] + hi[k]);
        if a < -limit || b > limit {
            return Err(Error::FootprintOverflow(format!(
                "footprint [{a:.4}, {b:.4}] exceeds +/-{limit:.4} m along axis {k}"
            )));
        }
    }
    let rot = params.hole_rotation();
    let entrance_frame = Pose::new(entrance, rot_z(params.hole_yaw));
    let bottom_frame = Pose::new(entrance - params.hole_axis() * depth, rot);

    let rim: Vec<Vec3> = shape.rim.iter().map(|p| p + entrance).collect();
    let floor: Vec<Vec3> = shape.floor.iter().map(|p| p + entrance).collect();
    let entrance_section = ConvexPolygon::new(rim.iter().map(|p| [p.x, p.y]).collect())
        .expect("rim has the cavity's vertex count");
    let plate_mesh = plate_mesh(half, thickness, &entrance, &rim, &floor);

    Ok(AssemblyModule {
        params: params.clone(),
        peg_mesh,
        plate_mesh,
        entrance_frame,
        bottom_frame,
        canonical_insert_rotation: rot,
        hole_depth: depth,
        plate_thickness: thickness,
        peg_section: section,
        cavity_section: shape.cavity,
        entrance_section,
        rim_heights: shape.rim_heights,
    })
}

fn plate_mesh(half: f64, thickness: f64, center: &Vec3, rim: &[Vec3], floor: &[Vec3]) -> TriMesh {
    const SNAP: f64 = 1e-12;
    let m = rim.len();
    let mut mesh = TriMesh::default();
    let corners = [[-half, -half], [half, -half], [half, half], [-half, half]];
    for c in corners {
        mesh.vertices.push([c[0], c[1], 0.0]);
    }
    for c in corners {
        mesh.vertices.push([c[0], c[1], -thickness]);
    }
    let rim_base = 8u32;
    let floor_base = rim_base + m as u32;
    mesh.vertices.extend(rim.iter().map(|p| [p.x, p.y, 0.0]));
    mesh.vertices.extend(floor.iter().map(|p| [p.x, p.y, p.z]));

    mesh.triangles.push([4, 6, 5]);
    mesh.triangles.push([4, 7, 6]);

    // Project each rim vertex radially from the entrance onto the square;
    // the band between rim and square then splits into convex sectors.
    let (cx, cy) = (center.x, center.y);
    let mut projected = Vec::with_capacity(m);
    // (parameter along side, vertex index) per side, side k runs corner k -> k+1.
    let mut side_points: [Vec<(f64, u32)>; 4] = Default::default();
    for p in rim {
        let (dx, dy) = (p.x - cx, p.y - cy);
        let mut t = f64::INFINITY;
        let mut side = 0;
        for (k, (num, den)) in [
            (-half - cy, dy),
            (half - cx, dx),
            (half - cy, dy),
            (-half - cx, dx),
        ]
        .into_iter()
        .enumerate()
        {
            if den.abs() > 0.0 {
                let tk = num / den;
                if tk > 0.0 && tk < t {
                    t = tk;
                    side = k;
                }
            }
        }
        let q = [cx + t * dx, cy + t * dy];
        if let Some(c) = corners
            .iter()
            .position(|c| (c[0] - q[0]).abs() < SNAP && (c[1] - q[1]).abs() < SNAP)
        {
            projected.push(c as u32);
            continue;
        }
        let q = match side {
            0 => [q[0], -half],
            1 => [half, q[1]],
            2 => [q[0], half],
            _ => [-half, q[1]],
        };
        let param = match side {
            0 => q[0],
            1 => q[1],
            2 => -q[0],
            _ => -q[1],
        };
        let idx = mesh.vertices.len() as u32;
        mesh.vertices.push([q[0], q[1], 0.0]);
        side_points[side].push((param, idx));
        projected.push(idx);
    }

    for (k, points) in side_points.iter_mut().enumerate() {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let next = (k + 1) % 4;
        let mut chain: Vec<u32> = vec![k as u32];
        chain.extend(points.iter().map(|p| p.1));
        chain.push(next as u32);
        let (b0, b1) = (4 + k as u32, 4 + next as u32);
        mesh.triangles.push([chain[0], b0, b1]);
        for w in chain.windows(2) {
            mesh.triangles.push([w[0], b1, w[1]]);
        }
    }

    let angle = |x: f64, y: f64| (y - cy).atan2(x - cx);
    let corner_angles: Vec<f64> = corners.iter().map(|c| angle(c[0], c[1])).collect();
    for j in 0..m {
        let j1 = (j + 1) % m;
        let a0 = angle(rim[j].x, rim[j].y);
        let mut span = angle(rim[j1].x, rim[j1].y) - a0;
        span = span.rem_euclid(TAU);
        let mut inside: Vec<(f64, u32)> = corner_angles
            .iter()
            .enumerate()
            .filter_map(|(c, &ac)| {
                let rel = (ac - a0).rem_euclid(TAU);
                (rel > 0.0 && rel < span).then_some((rel, c as u32))
            })
            .filter(|&(_, c)| c != projected[j] && c != projected[j1])
            .collect();
        inside.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut outer = vec![projected[j]];
        outer.extend(inside.into_iter().map(|(_, c)| c));
        outer.push(projected[j1]);
        let hub = rim_base + j as u32;
        for w in outer.windows(2) {
            mesh.triangles.push([hub, w[0], w[1]]);
        }
        mesh.triangles.push([hub, projected[j1], rim_base + j1 as u32]);
    }

    let m = m as u32;
    for k in 0..m {
        let k1 = (k + 1) % m;
        mesh.triangles.push([rim_base + k, floor_base + k1, floor_base + k]);
        mesh.triangles.push([rim_base + k, rim_base + k1, floor_base + k1]);
    }
    for k in 1..m - 1 {
        mesh.triangles.push([floor_base, floor_base + k, floor_base + k + 1]);
    }
    mesh
}
