use std::fmt;
use std::ops::Mul;

use nalgebra::{Isometry3, Matrix3, Quaternion, Rotation3, Translation3, UnitQuaternion, Vector3};

use crate::{Error, Result};

/// Rigid transform in SE(3).
///
/// Poses are named by the frames they map between: `T_cw` maps world points
/// into the camera frame, `T_wc` is its inverse (camera position and
/// orientation in the world, the TUM trajectory convention).
#[derive(Clone, Copy, PartialEq)]
pub struct PoseSE3(Isometry3<f64>);

/// Allowed deviation of a parsed quaternion norm from 1 before it is
/// rejected instead of renormalised.
const QUATERNION_NORM_TOLERANCE: f64 = 1e-3;

impl PoseSE3 {
    pub fn identity() -> Self {
        Self(Isometry3::identity())
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self(Isometry3::from_parts(Translation3::from(translation), rotation))
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    /// Rotation given as an axis-angle vector (radians).
    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::from_scaled_axis(axis_angle), translation)
    }

    /// Builds a pose from a rotation matrix, projecting it onto SO(3).
    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix_eps(rotation, 1e-12, 100, Rotation3::identity());
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    /// TUM order: translation `(tx, ty, tz)` and quaternion `(qx, qy, qz, qw)`.
    pub fn from_tum(translation: [f64; 3], quaternion: [f64; 4]) -> Result<Self> {
        let [qx, qy, qz, qw] = quaternion;
        let q = Quaternion::new(qw, qx, qy, qz);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "quaternion norm {norm} is not within {QUATERNION_NORM_TOLERANCE} of 1"
            )));
        }
        Ok(Self::new(
            UnitQuaternion::from_quaternion(q),
            Vector3::from(translation),
        ))
    }

    /// Inverse of [`PoseSE3::from_tum`]; `qw` is kept non-negative.
    pub fn to_tum(&self) -> ([f64; 3], [f64; 4]) {
        let t = self.translation();
        let mut q = *self.0.rotation.quaternion();
        if q.w < 0.0 {
            q = -q;
        }
        ([t.x, t.y, t.z], [q.i, q.j, q.k, q.w])
    }

    pub fn isometry(&self) -> &Isometry3<f64> {
        &self.0
    }

    pub fn rotation(&self) -> UnitQuaternion<f64> {
        self.0.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.0.rotation.to_rotation_matrix().matrix()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.translation.vector
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self(self.0 * other.0)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.0.rotation * p + self.0.translation.vector
    }

    /// Rotation angle in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        self.0.rotation.angle()
    }

    /// Left-multiplies by a small increment `[rho; phi]`
    /// (translation, axis-angle). Used as the retraction in pose refinement.
    pub fn retract(&self, delta: &nalgebra::Vector6<f64>) -> Self {
        let inc = Self::from_axis_angle(
            Vector3::new(delta[3], delta[4], delta[5]),
            Vector3::new(delta[0], delta[1], delta[2]),
        );
        inc.compose(self)
    }
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for PoseSE3 {
    type Output = PoseSE3;

    fn mul(self, rhs: PoseSE3) -> PoseSE3 {
        self.compose(&rhs)
    }
}

impl From<Isometry3<f64>> for PoseSE3 {
    fn from(iso: Isometry3<f64>) -> Self {
        Self(iso)
    }
}

impl fmt::Debug for PoseSE3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (t, q) = self.to_tum();
        write!(f, "PoseSE3 {{ t: {t:?}, q(xyzw): {q:?} }}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_pose() -> impl Strategy<Value = PoseSE3> {
        (
            prop::array::uniform3(-3.0f64..3.0),
            prop::array::uniform3(-5.0f64..5.0),
        )
            .prop_map(|(aa, t)| PoseSE3::from_axis_angle(Vector3::from(aa), Vector3::from(t)))
    }

    fn pose_close(a: &PoseSE3, b: &PoseSE3, tol: f64) -> bool {
        (a.translation() - b.translation()).norm() < tol
            && (a.rotation_matrix() - b.rotation_matrix()).norm() < tol
    }

    proptest! {
        #[test]
        fn composition_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            prop_assert!(pose_close(&((a * b) * c), &(a * (b * c)), 1e-9));
        }

        #[test]
        fn inverse_cancels(a in arb_pose()) {
            prop_assert!(pose_close(&(a * a.inverse()), &PoseSE3::identity(), 1e-9));
            let r = a.rotation_matrix();
            prop_assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-9);
        }

        #[test]
        fn tum_round_trip(a in arb_pose()) {
            let (t, q) = a.to_tum();
            let b = PoseSE3::from_tum(t, q).unwrap();
            prop_assert!(pose_close(&a, &b, 1e-12));
        }
    }

    #[test]
    fn slightly_denormalised_quaternion_is_accepted() {
        let p = PoseSE3::from_tum([0.0; 3], [0.0, 0.0, 0.0, 1.0005]).unwrap();
        assert!((p.rotation().quaternion().norm() - 1.0).abs() < 1e-12);
        assert!(PoseSE3::from_tum([0.0; 3], [0.0, 0.0, 0.0, 1.1]).is_err());
    }

    #[test]
    fn rotation_angle_range() {
        assert_eq!(PoseSE3::identity().rotation_angle(), 0.0);
        let p = PoseSE3::from_axis_angle(Vector3::new(0.0, 0.0, 3.0), Vector3::zeros());
        assert!((p.rotation_angle() - 3.0).abs() < 1e-12);
    }
}
