use std::f64::consts::{FRAC_PI_2, PI};

use peghole::spatial::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rotation(seed: u64) -> Mat3 {
    random_rotation(&mut ChaCha8Rng::seed_from_u64(seed))
}

fn pose(seed: u64) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random_rotation(&mut rng);
    let t = random_unit_vector(&mut rng) * 0.3;
    Pose::new(t, r)
}

fn det(r: &Mat3) -> f64 {
    r.determinant()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn encode_decode_round_trip(seed in any::<u64>()) {
        let r = rotation(seed);
        let back = rot6d_decode(&rot6d_encode(&r).unwrap()).unwrap();
        prop_assert!((back - r).norm() <= 1e-9);
    }

    #[test]
    fn decode_encode_round_trip(seed in any::<u64>()) {
        let v = rot6d_encode(&rotation(seed)).unwrap();
        let again = rot6d_encode(&rot6d_decode(&v).unwrap()).unwrap();
        for k in 0..6 {
            prop_assert!((again.0[k] - v.0[k]).abs() <= 1e-9);
        }
    }

    #[test]
    fn decoded_rotations_are_proper(values in prop::array::uniform6(-2.0f64..2.0)) {
        if let Ok(r) = rot6d_decode(&Rotation6D(values)) {
            prop_assert!(orthonormality_residual(&r) <= 1e-9);
            prop_assert!((det(&r) - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn relative_pose_composes_back(a in any::<u64>(), b in any::<u64>()) {
        let (pa, pb) = (pose(a), pose(b));
        let rel = relative_pose(&pa, &pb);
        let back = pa.compose(&rel);
        prop_assert!((back.translation - pb.translation).norm() <= 1e-9);
        prop_assert!((back.rotation - pb.rotation).norm() <= 1e-9);
    }

    #[test]
    fn orientation_distance_symmetric_and_left_invariant(a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
        let (ra, rb, g) = (rotation(a), rotation(b), rotation(c));
        let d = orientation_distance(&ra, &rb);
        prop_assert!((d - orientation_distance(&rb, &ra)).abs() <= 1e-12);
        prop_assert!((d - orientation_distance(&(g * ra), &(g * rb))).abs() <= 1e-9);
        prop_assert!(d >= 0.0 && d <= 8f64.sqrt() + 1e-9);
        prop_assert!(orientation_distance(&ra, &ra) <= 1e-12);
    }

    #[test]
    fn exp_log_round_trip(w in prop::array::uniform3(-1.5f64..1.5)) {
        let w = Vec3::from(w);
        let r = exp_so3(&w);
        prop_assert!(orthonormality_residual(&r) <= 1e-9);
        prop_assert!((log_so3(&r) - w).norm() <= 1e-8);
    }

    #[test]
    fn perturbed_poses_stay_valid(seed in any::<u64>(), s in 0.0f64..0.01, r in 0.0f64..0.2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = perturb_pose(&pose(seed), &NoiseSpec { sigma_pos: s, sigma_rot: r }, &mut rng);
        prop_assert!(p.is_valid());
        prop_assert!(orthonormality_residual(&p.rotation) <= 1e-9);
    }

    #[test]
    fn zero_noise_is_identity(seed in any::<u64>()) {
        let p = pose(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert_eq!(perturb_pose(&p, &NoiseSpec::ZERO, &mut rng), p);
    }
}

#[test]
fn analytic_encodings() {
    assert_eq!(rot6d_encode(&Mat3::identity()).unwrap().0, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let q = rot6d_encode(&rot_z(FRAC_PI_2)).unwrap().0;
    let expected = [0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
    for k in 0..6 {
        assert!((q[k] - expected[k]).abs() < 1e-15);
    }
}

#[test]
fn decode_is_scale_invariant_and_orthogonalizes() {
    assert_eq!(rot6d_decode(&Rotation6D([2.0, 0.0, 0.0, 0.0, 3.0, 0.0])).unwrap(), Mat3::identity());
    let r = rot6d_decode(&Rotation6D([1.0, 0.0, 0.0, 1.0, 1.0, 0.0])).unwrap();
    assert!((r - Mat3::identity()).norm() < 1e-15);
}

#[test]
fn degenerate_encodings_are_rejected() {
    for bad in [[1.0, 0.0, 0.0, 2.0, 0.0, 0.0], [0.0; 6], [1e-12, 0.0, 0.0, 0.0, 1.0, 0.0]] {
        assert!(matches!(rot6d_decode(&Rotation6D(bad)), Err(peghole::Error::DegenerateEncoding(_))));
    }
}

#[test]
fn non_orthonormal_input_is_rejected() {
    let m = Mat3::identity() * 1.01;
    assert!(matches!(rot6d_encode(&m), Err(peghole::Error::NotOrthonormal { .. })));
}

#[test]
fn orientation_distance_analytic_cases() {
    let i = Mat3::identity();
    assert!(orientation_distance(&i, &i).abs() < 1e-12);
    // 90° about z: I - R has two ±1 off-diagonals and two 1s on the diagonal.
    assert!((orientation_distance(&i, &rot_z(FRAC_PI_2)) - 2.0).abs() < 1e-9);
    assert!((orientation_distance(&i, &rot_z(PI)) - 8f64.sqrt()).abs() < 1e-9);
}

#[test]
fn relative_pose_simple_cases() {
    let p = pose(3);
    let rel = relative_pose(&p, &p);
    assert!(rel.translation.norm() < 1e-12 && (rel.rotation - Mat3::identity()).norm() < 1e-12);
    let rel = relative_pose(&Pose::identity(), &Pose::from_translation(Vec3::new(0.0, 0.0, 0.1)));
    assert_eq!(rel.translation, Vec3::new(0.0, 0.0, 0.1));
}

#[test]
fn translation_noise_has_configured_spread() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let noise = NoiseSpec { sigma_pos: 0.0005, sigma_rot: 0.0 };
    let n = 100_000;
    let mut sums = [0.0; 3];
    for _ in 0..n {
        let p = perturb_pose(&Pose::identity(), &noise, &mut rng);
        for k in 0..3 {
            sums[k] += p.translation[k] * p.translation[k];
        }
    }
    for s in sums {
        let sd = (s / n as f64).sqrt();
        assert!((sd - 0.0005).abs() <= 0.00005, "sd {sd}");
    }
}

#[test]
fn perturbation_is_deterministic() {
    let noise = NoiseSpec::default();
    let a = perturb_pose(&pose(1), &noise, &mut ChaCha8Rng::seed_from_u64(5));
    let b = perturb_pose(&pose(1), &noise, &mut ChaCha8Rng::seed_from_u64(5));
    assert_eq!(a, b);
}

#[test]
fn pose_records_round_trip() {
    let p = pose(9);
    let back = Pose::from_record(&p.to_record()).unwrap();
    assert!((back.rotation - p.rotation).norm() < 1e-12);
    assert_eq!(back.translation, p.translation);
}
