//! The insertion POMDP for a single module.
//!
//! Observations are the hole entrance and hole bottom frames expressed in the
//! peg frame (`peg⁻¹ ∘ frame`), each translated and 6D-encoded. Actions are
//! linear and angular velocity commands in the peg frame, normalized to
//! `[-1, 1]`. The reward is the change of the potential
//! `Φ = 1 − (0.8 p/p0 + 0.2 r/r0)` evaluated on the true state.

use std::f64::consts::{FRAC_PI_2, TAU};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{
    make_body, step_physics_with_stats, MaterialProps, PegState, PhysicsConfig, RigidBody, Scene,
    StepStats,
};
use crate::procgen::AssemblyModule;
use crate::spatial::{
    exp_so3, orientation_distance, perturb_pose, random_unit_vector, relative_pose, rot6d_encode,
    rot_z, sample_rotation_noise, sample_translation_noise, NoiseSpec, Pose, Vec3,
};

pub const OBS_DIM: usize = 18;
pub const ACTION_DIM: usize = 6;

pub type Action = [f64; ACTION_DIM];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn t_entrance(&self) -> Vec3 {
        Vec3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn rot6d_entrance(&self) -> [f64; 6] {
        self.0[3..9].try_into().expect("slice of six")
    }

    pub fn t_bottom(&self) -> Vec3 {
        Vec3::new(self.0[9], self.0[10], self.0[11])
    }

    pub fn rot6d_bottom(&self) -> [f64; 6] {
        self.0[12..18].try_into().expect("slice of six")
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Success,
    BelowSurface,
    Timeout,
}

impl Status {
    pub fn is_done(self) -> bool {
        self != Status::Running
    }

    /// True for outcomes that end the underlying MDP (not a time limit).
    pub fn is_terminal(self) -> bool {
        matches!(self, Status::Success | Status::BelowSurface)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardState {
    pub p0: f64,
    pub r0: f64,
    pub phi: f64,
    pub phi_initial: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    pub control_hz: f64,
    /// Side of the square spawn area at curriculum progress 0 and 1, meters.
    pub spawn_side: [f64; 2],
    pub spawn_height: [f64; 2],
    /// Maximum spawn tilt from the hole axis at progress 0 and 1, degrees.
    pub spawn_tilt_deg: [f64; 2],
    pub friction: [f64; 2],
    pub restitution: [f64; 2],
    pub noise: NoiseSpec,
    pub max_linear_speed: f64,
    pub max_angular_speed: f64,
    pub success_position: f64,
    pub success_angle_deg: f64,
    pub below_surface_depth: f64,
    pub position_weight: f64,
    pub distance_floor: f64,
    pub spawn_clearance: f64,
    pub spawn_tries: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: 500,
            control_hz: 50.0,
            spawn_side: [0.05, 0.5],
            spawn_height: [0.10, 0.30],
            spawn_tilt_deg: [5.0, 45.0],
            friction: [0.2, 1.0],
            restitution: [0.0, 0.3],
            noise: NoiseSpec::default(),
            max_linear_speed: 0.25,
            max_angular_speed: FRAC_PI_2,
            success_position: 0.0025,
            success_angle_deg: 5.0,
            below_surface_depth: 0.001,
            position_weight: 0.8,
            distance_floor: 1e-6,
            spawn_clearance: 0.001,
            spawn_tries: 100,
        }
    }
}

fn lerp(r: [f64; 2], t: f64) -> f64 {
    r[0] + (r[1] - r[0]) * t.clamp(0.0, 1.0)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.max_steps == 0 || !(self.control_hz > 0.0) {
            return bad("max_steps and control_hz must be positive");
        }
        for r in [self.spawn_side, self.spawn_height, self.spawn_tilt_deg, self.friction, self.restitution] {
            if !(r[0] <= r[1] && r[0] >= 0.0) {
                return bad("episode ranges must be ordered and non-negative");
            }
        }
        if self.friction[0] < 0.05 || self.friction[1] > 2.0 {
            return bad("friction range must lie within [0.05, 2.0]");
        }
        if self.restitution[1] > 1.0 {
            return bad("restitution range must lie within [0, 1]");
        }
        if !(self.noise.sigma_pos >= 0.0 && self.noise.sigma_rot >= 0.0) {
            return bad("noise must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.position_weight) {
            return bad("position_weight must lie in [0, 1]");
        }
        if self.spawn_tries == 0 {
            return bad("spawn_tries must be positive");
        }
        Ok(())
    }

    pub fn spawn_side_at(&self, progress: f64) -> f64 {
        lerp(self.spawn_side, progress)
    }

    pub fn spawn_tilt_at(&self, progress: f64) -> f64 {
        lerp(self.spawn_tilt_deg, progress).to_radians()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub status: Status,
    /// Set when the physics diverged and the episode was ended as below surface.
    pub diverged: bool,
    pub step: usize,
}

/// Entrance and bottom frames in the peg frame, each independently perturbed.
pub fn compute_observation<R: Rng + ?Sized>(
    peg: &Pose,
    module: &AssemblyModule,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Observation {
    let entrance = perturb_pose(&relative_pose(peg, &module.entrance_frame), noise, rng);
    let bottom = perturb_pose(&relative_pose(peg, &module.bottom_frame), noise, rng);
    let mut v = [0.0; OBS_DIM];
    for (offset, pose) in [(0, &entrance), (9, &bottom)] {
        v[offset..offset + 3].copy_from_slice(pose.translation.as_slice());
        let enc = rot6d_encode(&pose.rotation).expect("perturbed rotations stay orthonormal");
        v[offset + 3..offset + 9].copy_from_slice(&enc.0);
    }
    Observation(v)
}

/// Clips, scales and perturbs an action into a peg-frame target twist.
pub fn map_action<R: Rng + ?Sized>(a: &Action, config: &EpisodeConfig, rng: &mut R) -> [f64; 6] {
    let mut out = [0.0; 6];
    for k in 0..6 {
        let c = if a[k].is_nan() { 0.0 } else { a[k].clamp(-1.0, 1.0) };
        out[k] = c * if k < 3 { config.max_linear_speed } else { config.max_angular_speed };
    }
    if !config.noise.is_zero() {
        let dv = sample_translation_noise(config.noise.sigma_pos * config.control_hz, rng);
        let dw = sample_rotation_noise(config.noise.sigma_rot, rng) * config.control_hz;
        for k in 0..3 {
            out[k] += dv[k];
            out[k + 3] += dw[k];
        }
    }
    out
}

/// Noise-free positional and orientation distances to the seated pose.
pub fn goal_distances(peg: &Pose, module: &AssemblyModule) -> (f64, f64) {
    let p = relative_pose(peg, &module.bottom_frame).translation.norm();
    let r = orientation_distance(&peg.rotation, &module.canonical_insert_rotation);
    (p, r)
}

pub fn potential(p: f64, r: f64, state: &RewardState, position_weight: f64) -> f64 {
    1.0 - (position_weight * p / state.p0 + (1.0 - position_weight) * r / state.r0)
}

pub fn init_reward_state(peg: &Pose, module: &AssemblyModule, config: &EpisodeConfig) -> RewardState {
    let (p, r) = goal_distances(peg, module);
    let mut state = RewardState {
        p0: p.max(config.distance_floor),
        r0: r.max(config.distance_floor),
        phi: 0.0,
        phi_initial: 0.0,
    };
    state.phi = potential(p, r, &state, config.position_weight);
    state.phi_initial = state.phi;
    state
}

/// Shaped reward `Φ − Φ_prev` and the new potential.
pub fn compute_reward(
    prev_phi: f64,
    peg: &Pose,
    module: &AssemblyModule,
    state: &RewardState,
    config: &EpisodeConfig,
) -> (f64, f64) {
    let (p, r) = goal_distances(peg, module);
    let phi = potential(p, r, state, config.position_weight);
    (phi - prev_phi, phi)
}

pub fn is_inserted(peg: &Pose, module: &AssemblyModule, config: &EpisodeConfig) -> bool {
    let t = relative_pose(peg, &module.bottom_frame).translation.norm();
    let cos = peg.rotation.column(2).dot(&module.hole_axis()).clamp(-1.0, 1.0);
    t <= config.success_position && cos.acos() <= config.success_angle_deg.to_radians()
}

/// A world point at least `below_surface_depth` under the mounting plane whose
/// projection along the hole axis misses the opening (grown by the clearance).
pub fn is_below_surface(points: &[Vec3], module: &AssemblyModule, config: &EpisodeConfig) -> bool {
    let axis = module.hole_axis();
    points.iter().any(|x| {
        if x.z > -config.below_surface_depth {
            return false;
        }
        let s = x - axis * (x.z / axis.z);
        module.entrance_section.signed_distance([s.x, s.y]) > module.params.clearance
    })
}

pub fn check_termination(
    peg: &Pose,
    points: &[Vec3],
    module: &AssemblyModule,
    step_count: usize,
    config: &EpisodeConfig,
) -> Status {
    if is_inserted(peg, module, config) {
        Status::Success
    } else if is_below_surface(points, module, config) {
        Status::BelowSurface
    } else if step_count >= config.max_steps {
        Status::Timeout
    } else {
        Status::Running
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub status: Status,
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(row).map_err(|e| Error::json(path, e))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct PegInHoleEnv {
    module: AssemblyModule,
    scene: Scene,
    body: RigidBody,
    config: EpisodeConfig,
    physics: PhysicsConfig,
    rng: ChaCha8Rng,
    state: PegState,
    material: MaterialProps,
    reward_state: RewardState,
    observation: Observation,
    step_count: usize,
    status: Status,
    last_stats: StepStats,
    trace: Option<Vec<TraceRow>>,
}

impl PegInHoleEnv {
    pub fn new(
        module: AssemblyModule,
        config: EpisodeConfig,
        physics: PhysicsConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        physics.validate()?;
        let (state, body) = make_body(&module.peg_mesh, &physics)?;
        let scene = Scene::new(&module);
        Ok(Self {
            module,
            scene,
            body,
            config,
            physics,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state,
            material: MaterialProps::default(),
            reward_state: RewardState {
                p0: 1.0,
                r0: 1.0,
                phi: 0.0,
                phi_initial: 0.0,
            },
            observation: Observation([0.0; OBS_DIM]),
            step_count: 0,
            // Stepping before the first reset is a usage error.
            status: Status::Timeout,
            last_stats: StepStats::default(),
            trace: None,
        })
    }

    pub fn module(&self) -> &AssemblyModule {
        &self.module
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn body(&self) -> &RigidBody {
        &self.body
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn physics(&self) -> &PhysicsConfig {
        &self.physics
    }

    pub fn state(&self) -> &PegState {
        &self.state
    }

    pub fn material(&self) -> &MaterialProps {
        &self.material
    }

    pub fn reward_state(&self) -> &RewardState {
        &self.reward_state
    }

    pub fn observation(&self) -> &Observation {
        &self.observation
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn last_stats(&self) -> &StepStats {
        &self.last_stats
    }

    pub fn enable_trace(&mut self, on: bool) {
        self.trace = on.then(Vec::new);
    }

    /// Trace rows of the current episode, if tracing is enabled.
    pub fn trace(&self) -> Option<&[TraceRow]> {
        self.trace.as_deref()
    }

    /// World positions of the contact samples.
    pub fn sample_points(&self) -> Vec<Vec3> {
        self.body
            .samples
            .iter()
            .map(|p| self.state.pose.transform_point(p))
            .collect()
    }

    fn spawn_pose(&mut self, progress: f64) -> Result<Pose> {
        let side = self.config.spawn_side_at(progress);
        let max_tilt = self.config.spawn_tilt_at(progress);
        let entrance = self.module.entrance_frame.translation;
        let axis = self.module.hole_axis();
        let canonical = self.module.canonical_insert_rotation;
        for _ in 0..self.config.spawn_tries {
            let dx = self.rng.random_range(-0.5..0.5) * side;
            let dy = self.rng.random_range(-0.5..0.5) * side;
            let h = uniform(&mut self.rng, self.config.spawn_height);
            let tilt = if max_tilt > 0.0 {
                self.rng.random_range(0.0..max_tilt)
            } else {
                0.0
            };
            let yaw = self.rng.random_range(0.0..TAU);
            let k = random_unit_vector(&mut self.rng);
            let k = (k - axis * axis.dot(&k)).try_normalize(1e-9).unwrap_or_else(|| {
                axis.cross(&Vec3::x()).try_normalize(1e-9).unwrap_or(Vec3::y())
            });
            let rotation = exp_so3(&(k * tilt)) * canonical * rot_z(yaw);
            let pose = Pose::new(entrance + Vec3::new(dx, dy, h), rotation);
            let clear = self.body.samples.iter().all(|p| {
                self.scene
                    .distance_within(&pose.transform_point(p), self.config.spawn_clearance)
                    .is_none()
            });
            if clear {
                return Ok(pose);
            }
        }
        Err(Error::SpawnFailed(self.config.spawn_tries))
    }

    pub fn reset(&mut self, progress: f64) -> Result<Observation> {
        let pose = self.spawn_pose(progress)?;
        self.material = MaterialProps {
            friction_coefficient: uniform(&mut self.rng, self.config.friction),
            restitution: uniform(&mut self.rng, self.config.restitution),
        };
        self.start_episode(PegState::at_rest(pose));
        Ok(self.observation)
    }

    /// Starts an episode from an explicit state, keeping the current material.
    pub fn reset_to(&mut self, state: PegState) -> Observation {
        self.start_episode(state);
        self.observation
    }

    /// Replaces the env's random stream; the current episode is unaffected.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn set_material(&mut self, material: MaterialProps) {
        self.material = material;
    }

    fn start_episode(&mut self, state: PegState) {
        self.state = state;
        self.step_count = 0;
        self.status = Status::Running;
        self.last_stats = StepStats::default();
        self.reward_state = init_reward_state(&state.pose, &self.module, &self.config);
        self.observation =
            compute_observation(&state.pose, &self.module, &self.config.noise, &mut self.rng);
        if let Some(trace) = &mut self.trace {
            trace.clear();
        }
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.status.is_done() {
            return Err(Error::Usage("step called on a finished episode; reset first".into()));
        }
        let local = map_action(action, &self.config, &mut self.rng);
        let rot = self.state.pose.rotation;
        let v = rot * Vec3::new(local[0], local[1], local[2]);
        let w = rot * Vec3::new(local[3], local[4], local[5]);
        let target = [v.x, v.y, v.z, w.x, w.y, w.z];
        self.step_count += 1;
        let outcome = step_physics_with_stats(
            &self.state,
            &target,
            &self.body,
            &self.scene,
            &self.material,
            &self.physics,
            self.physics.substeps,
        );
        let (reward, status, diverged) = match outcome {
            Ok((next, stats)) => {
                self.state = next;
                self.last_stats = stats;
                let (reward, phi) = compute_reward(
                    self.reward_state.phi,
                    &self.state.pose,
                    &self.module,
                    &self.reward_state,
                    &self.config,
                );
                self.reward_state.phi = phi;
                let points = self.sample_points();
                let status = check_termination(
                    &self.state.pose,
                    &points,
                    &self.module,
                    self.step_count,
                    &self.config,
                );
                let reward = if status == Status::BelowSurface { -1.0 } else { reward };
                (reward, status, false)
            }
            Err(Error::Diverged {
                last_valid,
                substeps,
            }) => {
                log::warn!(
                    "physics diverged after {substeps} substeps (module seed {}); ending episode",
                    self.module.params.seed
                );
                self.state = *last_valid;
                (-1.0, Status::BelowSurface, true)
            }
            Err(e) => return Err(e),
        };
        self.status = status;
        self.observation =
            compute_observation(&self.state.pose, &self.module, &self.config.noise, &mut self.rng);
        if let Some(trace) = &mut self.trace {
            trace.push(TraceRow {
                step: self.step_count,
                observation: self.observation.0.to_vec(),
                action: action.to_vec(),
                reward,
                status,
            });
        }
        Ok(StepResult {
            observation: self.observation,
            reward,
            status,
            diverged,
            step: self.step_count,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::procgen::{build_module, ModuleParams};

    fn module() -> AssemblyModule {
        build_module(&ModuleParams {
            seed: 0,
            vertex_count: 4,
            circumradius: 0.02,
            aspect_ratio: 1.0,
            peg_height: 0.1,
            tapering: 0.0,
            hole_depth_fraction: 0.5,
            hole_tilt: [0.0, 0.0],
            hole_yaw: 0.0,
            hole_position: [0.0, 0.0],
            clearance: 0.001,
            plate_side: 0.15,
            plate_margin: 0.01,
            plate_backing: 0.01,
        })
        .unwrap()
    }

    #[test]
    fn unit_action_maps_to_speed_limit() {
        let cfg = EpisodeConfig {
            noise: NoiseSpec::ZERO,
            ..EpisodeConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = map_action(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], &cfg, &mut rng);
        assert_eq!(v, [0.25, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(map_action(&[2.0, 0.0, 0.0, 0.0, 0.0, -3.0], &cfg, &mut rng), [
            0.25, 0.0, 0.0, 0.0, 0.0, -FRAC_PI_2
        ]);
        assert_eq!(map_action(&[0.0; 6], &cfg, &mut rng), [0.0; 6]);
    }

    #[test]
    fn seated_peg_observation() {
        let m = module();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let obs = compute_observation(&m.bottom_frame, &m, &NoiseSpec::ZERO, &mut rng);
        assert!(obs.t_bottom().norm() < 1e-15);
        assert_eq!(obs.rot6d_bottom(), [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!((obs.t_entrance() - Vec3::new(0.0, 0.0, m.hole_depth)).norm() < 1e-15);
    }

    #[test]
    fn below_surface_far_from_hole() {
        let m = module();
        let cfg = EpisodeConfig::default();
        assert!(is_below_surface(&[Vec3::new(0.1, 0.0, -0.005)], &m, &cfg));
        assert!(!is_below_surface(&[Vec3::new(0.0, 0.0, -0.005)], &m, &cfg));
        assert!(!is_below_surface(&[Vec3::new(0.1, 0.0, -0.0005)], &m, &cfg));
    }

    #[test]
    fn seated_peg_is_success() {
        let m = module();
        let cfg = EpisodeConfig::default();
        let status = check_termination(&m.bottom_frame, &[], &m, 10, &cfg);
        assert_eq!(status, Status::Success);
        let away = Pose::from_translation(Vec3::new(0.0, 0.0, 0.2));
        assert_eq!(check_termination(&away, &[], &m, 500, &cfg), Status::Timeout);
    }

    #[test]
    fn halving_distances_gives_half_potential() {
        let cfg = EpisodeConfig::default();
        let rs = RewardState {
            p0: 0.2,
            r0: 0.4,
            phi: 0.0,
            phi_initial: 0.0,
        };
        assert!((potential(0.1, 0.2, &rs, cfg.position_weight) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stepping_finished_episode_is_usage_error() {
        let mut env = PegInHoleEnv::new(module(), EpisodeConfig::default(), PhysicsConfig::default(), 1)
            .unwrap();
        assert!(matches!(env.step(&[0.0; 6]), Err(Error::Usage(_))));
    }
}
