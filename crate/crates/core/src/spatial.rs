//! Rigid transforms, the continuous 6D rotation encoding, rotation distances
//! and the pose noise model.
//!
//! Rotation matrices map body coordinates to world coordinates
//! (`p_world = R * p_body + t`). When serialized they are written row by row.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Residual above which an input is rejected as not being a rotation.
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-6;

const DEGENERATE_NORM: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub translation: Vec3,
    pub rotation: Mat3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            translation: Vec3::zeros(),
            rotation: Mat3::identity(),
        }
    }

    pub fn new(translation: Vec3, rotation: Mat3) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            translation,
            rotation: Mat3::identity(),
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            translation: -(rt * self.translation),
            rotation: rt,
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            translation: self.rotation * other.translation + self.translation,
            rotation: self.rotation * other.rotation,
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.tr_mul(&(p - self.translation))
    }

    pub fn is_valid(&self) -> bool {
        self.translation.iter().all(|v| v.is_finite())
            && orthonormality_residual(&self.rotation) <= 1e-9
            && (self.rotation.determinant() - 1.0).abs() <= 1e-9
    }

    /// Translation plus the 6D rotation encoding, for serialization.
    pub fn to_record(&self) -> PoseRecord {
        PoseRecord {
            translation: [self.translation.x, self.translation.y, self.translation.z],
            rotation6d: rot6d_columns(&self.rotation).0,
        }
    }

    pub fn from_record(record: &PoseRecord) -> Result<Pose> {
        let rotation = rot6d_decode(&Rotation6D(record.rotation6d))?;
        Ok(Pose {
            translation: Vec3::from(record.translation),
            rotation,
        })
    }
}

/// Serialized form of a pose: translation plus 6D rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub translation: [f64; 3],
    pub rotation6d: [f64; 6],
}

/// First two rotation columns stacked as `[c1x, c1y, c1z, c2x, c2y, c2z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation6D(pub [f64; 6]);

impl Rotation6D {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Per-axis positional standard deviation, meters.
    pub sigma_pos: f64,
    /// Rotation-angle standard deviation, radians.
    pub sigma_rot: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_pos: 0.0005,
            sigma_rot: 1.0_f64.to_radians(),
        }
    }
}

impl NoiseSpec {
    pub const ZERO: NoiseSpec = NoiseSpec {
        sigma_pos: 0.0,
        sigma_rot: 0.0,
    };

    pub fn is_zero(&self) -> bool {
        self.sigma_pos == 0.0 && self.sigma_rot == 0.0
    }
}

/// `‖RᵀR − I‖_F`.
pub fn orthonormality_residual(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).norm()
}

fn rot6d_columns(r: &Mat3) -> Rotation6D {
    Rotation6D([
        r[(0, 0)],
        r[(1, 0)],
        r[(2, 0)],
        r[(0, 1)],
        r[(1, 1)],
        r[(2, 1)],
    ])
}

pub fn rot6d_encode(r: &Mat3) -> Result<Rotation6D> {
    let residual = orthonormality_residual(r);
    if !(residual <= ORTHONORMAL_TOLERANCE) || r.determinant() <= 0.0 {
        return Err(Error::NotOrthonormal { residual });
    }
    Ok(rot6d_columns(r))
}

/// Gram–Schmidt decode of the two embedded columns.
pub fn rot6d_decode(v: &Rotation6D) -> Result<Mat3> {
    let a = Vec3::new(v.0[0], v.0[1], v.0[2]);
    let b = Vec3::new(v.0[3], v.0[4], v.0[5]);
    if !a.iter().chain(b.iter()).all(|x| x.is_finite()) {
        return Err(Error::DegenerateEncoding("non-finite component"));
    }
    let na = a.norm();
    if na < DEGENERATE_NORM {
        return Err(Error::DegenerateEncoding("first column has near-zero norm"));
    }
    let c1 = a / na;
    let b_perp = b - c1 * c1.dot(&b);
    let nb = b_perp.norm();
    if nb < DEGENERATE_NORM * b.norm().max(1.0) {
        return Err(Error::DegenerateEncoding("columns are parallel or second is zero"));
    }
    let c2 = b_perp / nb;
    let c3 = c1.cross(&c2);
    Ok(Mat3::from_columns(&[c1, c2, c3]))
}

/// Pose of `frame_b` expressed in `frame_a`: `a⁻¹ ∘ b`.
pub fn relative_pose(frame_a: &Pose, frame_b: &Pose) -> Pose {
    frame_a.inverse().compose(frame_b)
}

/// Frobenius norm of `Ra − Rb`, in `[0, 2√2]` for rotations.
pub fn orientation_distance(ra: &Mat3, rb: &Mat3) -> f64 {
    (ra - rb).norm()
}

/// Angle of the relative rotation `Raᵀ Rb`, radians.
pub fn rotation_angle_between(ra: &Mat3, rb: &Mat3) -> f64 {
    let rel = ra.tr_mul(rb);
    ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues exponential of an axis-angle vector.
pub fn exp_so3(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let k = skew(w);
    if theta2 < 1e-16 {
        return Mat3::identity() + k + k * k * 0.5;
    }
    let theta = theta2.sqrt();
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / theta2;
    Mat3::identity() + k * a + k * k * b
}

/// Axis-angle vector of a rotation matrix.
pub fn log_so3(r: &Mat3) -> Vec3 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let vee = Vec3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    if theta < 1e-8 {
        return vee * 0.5;
    }
    if std::f64::consts::PI - theta < 1e-6 {
        // Near π: recover the axis from the symmetric part.
        let sym = (r + Mat3::identity()) * 0.5;
        let mut axis = Vec3::zeros();
        let mut best = -1.0;
        for i in 0..3 {
            let col = sym.column(i).into_owned();
            let n = col.norm();
            if n > best {
                best = n;
                axis = col / n;
            }
        }
        if axis.dot(&vee) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    vee * (theta / (2.0 * theta.sin()))
}

pub fn rot_x(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Re-orthonormalizes a nearly orthonormal matrix through its 6D encoding.
pub fn reorthonormalize(r: &Mat3) -> Mat3 {
    rot6d_decode(&rot6d_columns(r)).unwrap_or(*r)
}

pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Uniformly distributed rotation (Haar measure) via a random unit quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    let q = loop {
        let q: [f64; 4] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            break [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
        }
    };
    let [w, x, y, z] = q;
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Random-axis axis-angle perturbation with normally distributed angle.
pub fn sample_rotation_noise<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> Vec3 {
    let axis = random_unit_vector(rng);
    let angle: f64 = StandardNormal.sample(rng);
    axis * (angle * sigma)
}

pub fn sample_translation_noise<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> Vec3 {
    let v: [f64; 3] = [
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    ];
    Vec3::from(v) * sigma
}

pub fn perturb_pose<R: Rng + ?Sized>(p: &Pose, noise: &NoiseSpec, rng: &mut R) -> Pose {
    if noise.is_zero() {
        return *p;
    }
    let dt = sample_translation_noise(noise.sigma_pos, rng);
    let dr = sample_rotation_noise(noise.sigma_rot, rng);
    Pose {
        translation: p.translation + dt,
        rotation: reorthonormalize(&(exp_so3(&dr) * p.rotation)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn encode_identity_and_quarter_turn() {
        assert_eq!(
            rot6d_encode(&Mat3::identity()).unwrap().0,
            [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]
        );
        let v = rot6d_encode(&rot_z(FRAC_PI_2)).unwrap().0;
        let expected = [0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn encode_rejects_non_orthonormal() {
        let m = Mat3::identity() * 1.01;
        assert!(matches!(rot6d_encode(&m), Err(Error::NotOrthonormal { .. })));
        let reflect = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(rot6d_encode(&reflect).is_err());
    }

    #[test]
    fn decode_cases() {
        let id = rot6d_decode(&Rotation6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
        assert_eq!(id, Mat3::identity());
        let scaled = rot6d_decode(&Rotation6D([2.0, 0.0, 0.0, 0.0, 3.0, 0.0])).unwrap();
        assert!((scaled - Mat3::identity()).norm() < 1e-15);
        // c2 = (1,1,0) minus its projection onto e1 leaves e2.
        let skewed = rot6d_decode(&Rotation6D([1.0, 0.0, 0.0, 1.0, 1.0, 0.0])).unwrap();
        assert!((skewed - Mat3::identity()).norm() < 1e-15);
    }

    #[test]
    fn decode_degenerate_is_error() {
        for v in [
            [0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            [1.0, 0.0, 0.0, 2.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [f64::NAN, 0.0, 0.0, 0.0, 1.0, 0.0],
        ] {
            assert!(matches!(
                rot6d_decode(&Rotation6D(v)),
                Err(Error::DegenerateEncoding(_))
            ));
        }
    }

    #[test]
    fn orientation_distance_analytic() {
        let id = Mat3::identity();
        assert_eq!(orientation_distance(&id, &id), 0.0);
        assert!((orientation_distance(&id, &rot_z(PI)) - 8f64.sqrt()).abs() < 1e-12);
        assert!((orientation_distance(&id, &rot_z(FRAC_PI_2)) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn relative_pose_cases() {
        let p = Pose::new(Vec3::new(0.1, -0.2, 0.3), rot_x(0.4) * rot_z(1.1));
        let rel = relative_pose(&p, &p);
        assert!(rel.translation.norm() < 1e-15);
        assert!((rel.rotation - Mat3::identity()).norm() < 1e-15);

        let b = Pose::from_translation(Vec3::new(0.0, 0.0, 0.1));
        let rel = relative_pose(&Pose::identity(), &b);
        assert_eq!(rel.translation, Vec3::new(0.0, 0.0, 0.1));
    }

    #[test]
    fn exp_log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let axis = random_unit_vector(&mut rng);
            let angle = rng.random_range(0.0..PI - 1e-3);
            let w = axis * angle;
            let back = log_so3(&exp_so3(&w));
            assert!((back - w).norm() < 1e-9, "{w:?} vs {back:?}");
        }
        let near_pi = Vec3::new(0.0, 0.0, PI - 1e-9);
        let back = log_so3(&exp_so3(&near_pi));
        assert!((back - near_pi).norm() < 1e-6);
    }

    #[test]
    fn zero_noise_is_identity_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Pose::new(Vec3::new(1.0, 2.0, 3.0), rot_y(0.3));
        assert_eq!(perturb_pose(&p, &NoiseSpec::ZERO, &mut rng), p);
    }

    #[test]
    fn perturbation_is_seed_deterministic() {
        let p = Pose::new(Vec3::new(0.05, 0.0, 0.2), rot_x(0.2));
        let a = perturb_pose(&p, &NoiseSpec::default(), &mut ChaCha8Rng::seed_from_u64(9));
        let b = perturb_pose(&p, &NoiseSpec::default(), &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert!(a.is_valid());
    }
}
