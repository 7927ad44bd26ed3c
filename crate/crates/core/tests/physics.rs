mod common;

use peghole::physics::*;
use peghole::procgen::*;
use peghole::spatial::{rot_x, rot_z, random_rotation, Mat3, Pose, Vec3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn square() -> ModuleParams {
    ModuleParams {
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
    }
}

struct Rig {
    module: AssemblyModule,
    body: RigidBody,
    scene: Scene,
    config: PhysicsConfig,
}

fn rig(params: &ModuleParams) -> Rig {
    let module = build_module(params).unwrap();
    let config = PhysicsConfig::default();
    let (_, body) = make_body(&module.peg_mesh, &config).unwrap();
    let scene = Scene::new(&module);
    Rig { module, body, scene, config }
}

fn step(r: &Rig, s: &PegState, target: [f64; 6]) -> PegState {
    step_physics(s, &target, &r.body, &r.scene, &MaterialProps::default(), &r.config, r.config.substeps).unwrap()
}

#[test]
fn prism_inertia_matches_closed_form() {
    let r = rig(&square());
    let (m, a, h) = (0.5, 0.02 * 2f64.sqrt(), 0.1);
    assert!((r.body.mass - m).abs() < 1e-12);
    assert!((r.body.center_of_mass - Vec3::new(0.0, 0.0, h / 2.0)).norm() < 1e-12);
    // About the bottom-face centre: parallel axis shift of h/2 on x and y.
    let ixx = m * (a * a + h * h) / 12.0 + m * (h / 2.0).powi(2);
    let izz = m * (2.0 * a * a) / 12.0;
    let i = r.body.inertia;
    assert!((i[(0, 0)] - ixx).abs() < 1e-9 * ixx);
    assert!((i[(1, 1)] - ixx).abs() < 1e-9 * ixx);
    assert!((i[(2, 2)] - izz).abs() < 1e-9 * izz);
    assert!(i[(0, 1)].abs() < 1e-12 && i[(0, 2)].abs() < 1e-12 && i[(1, 2)].abs() < 1e-12);
}

#[test]
fn contact_samples_lie_on_the_surface_and_include_corners() {
    let r = rig(&square());
    assert_eq!(r.body.samples.len(), 256);
    let mesh = &r.module.peg_mesh;
    for s in &r.body.samples {
        assert!(common::mesh_distance(mesh, s) < 1e-12);
    }
    let corners = mesh.vertices.iter().filter(|v| r.body.samples.contains(&Vec3::from(**v))).count();
    assert_eq!(corners, 8);
    assert_eq!(sample_contact_points(mesh, 256), r.body.samples);
}

#[test]
fn free_space_velocity_tracking() {
    let r = rig(&square());
    let targets = [[0.2, 0.0, 0.0, 0.0, 0.0, 0.0], [0.0, -0.1, 0.15, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0, 0.0, 1.5], [0.05, 0.0, 0.0, 1.0, -0.5, 0.0]];
    for t in targets {
        let mut s = PegState::at_rest(Pose::from_translation(Vec3::new(0.0, 0.0, 0.3)));
        // 100 ms is five control periods.
        for _ in 0..5 {
            s = step(&r, &s, t);
        }
        let got = twist(&s);
        let want = nalgebra::Vector6::from_row_slice(&t);
        let v_err = (got.fixed_rows::<3>(0) - want.fixed_rows::<3>(0)).norm();
        let w_err = (got.fixed_rows::<3>(3) - want.fixed_rows::<3>(3)).norm();
        assert!(v_err <= 0.05 * want.fixed_rows::<3>(0).norm() + 1e-9, "{t:?} linear err {v_err}");
        assert!(w_err <= 0.05 * want.fixed_rows::<3>(3).norm() + 1e-9, "{t:?} angular err {w_err}");
    }
}

#[test]
fn commanded_speed_is_clamped() {
    let r = rig(&square());
    let mut s = PegState::at_rest(Pose::from_translation(Vec3::new(0.0, 0.0, 0.5)));
    for _ in 0..20 {
        s = step(&r, &s, [5.0, 0.0, 0.0, 0.0, 0.0, 40.0]);
        assert!(s.linear_velocity.norm() <= r.config.max_linear_speed + 1e-9);
        assert!(s.angular_velocity.norm() <= r.config.max_angular_speed + 1e-9);
    }
}

#[test]
fn pressing_on_the_plate_penetration_stays_small() {
    let r = rig(&square());
    let mut depths = Vec::new();
    // Peg well away from the hole, pushed down at full speed.
    let mut s = PegState::at_rest(Pose::from_translation(Vec3::new(-0.045, -0.045, 0.004)));
    for _ in 0..50 {
        let (next, stats) = step_physics_with_stats(&s, &[0.0, 0.0, -0.25, 0.0, 0.0, 0.0], &r.body, &r.scene, &MaterialProps::default(), &r.config, r.config.substeps).unwrap();
        s = next;
        depths.push(stats.max_penetration);
    }
    depths.sort_by(f64::total_cmp);
    let p99 = depths[(0.99 * (depths.len() - 1) as f64).round() as usize];
    assert!(p99 <= 1e-4, "p99 penetration {p99}");
    assert!(s.pose.translation.z > -1e-3);
}

#[test]
fn motion_decays_after_release_in_contact() {
    let r = rig(&square());
    let mut s = PegState::at_rest(Pose::from_translation(Vec3::new(-0.045, -0.045, 0.002)));
    for _ in 0..10 {
        s = step(&r, &s, [0.1, 0.0, -0.2, 0.0, 0.0, 0.0]);
    }
    let e0 = r.body.kinetic_energy(&s);
    assert!(e0 > 0.0);
    let mut prev = e0;
    for k in 0..25 {
        s = step(&r, &s, [0.0; 6]);
        let e = r.body.kinetic_energy(&s);
        // Zero command damps toward rest; allow tiny contact-induced wiggle.
        assert!(e <= prev * 1.05 + 1e-12, "step {k}: {e} after {prev}");
        prev = e;
    }
    assert!(prev < 1e-3 * e0);
}

#[test]
fn sliding_friction_stays_inside_the_cone() {
    let r = rig(&square());
    let material = MaterialProps::default();
    let mut s = PegState::at_rest(Pose::from_translation(Vec3::new(-0.05, -0.05, -2e-4)));
    s.linear_velocity = Vec3::new(0.1, 0.0, 0.0);
    let w = resolve_contacts(&s, &r.scene, &r.body.samples, &material, &r.config);
    let normal = w.force.z;
    let tangential = (w.force.x * w.force.x + w.force.y * w.force.y).sqrt();
    assert!(normal > 0.0);
    assert!(tangential <= material.friction_coefficient * normal * (1.0 + 1e-9));
    // Well above the regularization speed the full coefficient is reached.
    assert!(tangential >= 0.99 * material.friction_coefficient * normal);
    assert!(w.force.x < 0.0);
}

#[test]
fn stepping_is_deterministic() {
    let r = rig(&square());
    let mut a = PegState::at_rest(Pose::new(Vec3::new(0.005, -0.003, 0.03), rot_x(0.1)));
    let mut b = a;
    for _ in 0..40 {
        a = step(&r, &a, [0.0, 0.0, -0.1, 0.2, 0.0, 0.0]);
        b = step(&r, &b, [0.0, 0.0, -0.1, 0.2, 0.0, 0.0]);
    }
    assert_eq!(a, b);
}

#[test]
fn aligned_peg_drops_into_the_hole() {
    let r = rig(&square());
    let mut s = PegState::at_rest(Pose::new(r.module.entrance_frame.translation + Vec3::new(0.0, 0.0, 0.01), r.module.canonical_insert_rotation));
    for _ in 0..60 {
        s = step(&r, &s, [0.0, 0.0, -0.1, 0.0, 0.0, 0.0]);
    }
    let floor = r.module.bottom_frame.translation.z;
    assert!((s.pose.translation.z - floor).abs() < 5e-4, "{}", s.pose.translation.z);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn dynamics_are_equivariant_under_rigid_motion(seed in any::<u64>()) {
        let params = sample_module_params(&GenConfig::default(), seed % 64);
        let Ok(module) = build_module(&params) else { return Ok(()) };
        let config = PhysicsConfig::default();
        let (_, body) = make_body(&module.peg_mesh, &config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = Pose::new(Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)), random_rotation(&mut rng));
        let scene = Scene::new(&module);
        let moved = Scene::with_placement(&module, g);
        // Start in contact near the rim so the contact path is exercised.
        let start = PegState::at_rest(Pose::new(module.entrance_frame.translation + Vec3::new(0.004, 0.0, 0.002), module.canonical_insert_rotation * rot_z(0.2)));
        let cmd = [0.02, -0.01, -0.1, 0.3, -0.2, 0.1];
        let material = MaterialProps::default();
        let mut a = start;
        let mut b = start.transformed(&g);
        let rot = g.rotation;
        for _ in 0..10 {
            a = step_physics(&a, &cmd, &body, &scene, &material, &config, config.substeps).unwrap();
            let v = rot * Vec3::new(cmd[0], cmd[1], cmd[2]);
            let w = rot * Vec3::new(cmd[3], cmd[4], cmd[5]);
            b = step_physics(&b, &[v.x, v.y, v.z, w.x, w.y, w.z], &body, &moved, &material, &config, config.substeps).unwrap();
        }
        let back = a.transformed(&g);
        prop_assert!((back.pose.translation - b.pose.translation).norm() <= 1e-6);
        prop_assert!((back.pose.rotation - b.pose.rotation).norm() <= 1e-6);
    }
}

#[test]
fn rest_away_from_everything_is_exact() {
    let r = rig(&square());
    let s = PegState::at_rest(Pose::new(Vec3::new(0.0, 0.0, 0.4), Mat3::identity()));
    assert_eq!(step(&r, &s, [0.0; 6]), s);
}
