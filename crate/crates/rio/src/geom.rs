//! Rotations, rigid-body poses, and the error-state operators shared by the
//! estimation back-ends.
//!
//! Conventions, used consistently everywhere:
//! - Unit quaternions are Hamilton, scalar first. `q_AB` rotates vectors from
//!   frame `B` into frame `A`; composition `q_AB ⊗ q_BC = q_AC`.
//! - The world frame is z-up; gravity is `[0, 0, -9.81]`.
//! - Rotation error states are local (right-multiplicative) rotation vectors:
//!   `q = q̂ ⊗ [1; θ̃/2]`. Translation errors are plain differences.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Magnitude of gravitational acceleration [m/s²].
pub const GRAVITY: f64 = 9.81;

/// Gravity vector in the world frame (z-up, so it points down).
pub fn gravity_vec() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -GRAVITY)
}

/// Skew-symmetric cross-product matrix: `skew(a) * b == a × b`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Right Jacobian of the SO(3) exponential map.
///
/// Relates a perturbation of the rotation vector to a local perturbation of
/// the resulting rotation: `Exp(φ + δ) ≈ Exp(φ) Exp(J_r(φ) δ)`.
pub fn so3_right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let s = skew(phi);
    let (c1, c2) = if theta2 < 1e-10 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() - c1 * s + c2 * (s * s)
}

/// Inverse of the right Jacobian of the SO(3) exponential map.
pub fn so3_right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let s = skew(phi);
    let c = if theta2 < 1e-10 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let theta = theta2.sqrt();
        (1.0 / theta2) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() + 0.5 * s + c * (s * s)
}

/// A rotation stored as a Hamilton unit quaternion (scalar first).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Rotation(UnitQuaternion<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    /// Builds from `[w, x, y, z]` components, normalizing.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Self {
        Rotation(UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)))
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        Rotation(q)
    }

    /// Exponential map: rotation vector (axis * angle) to rotation.
    pub fn exp(phi: &Vector3<f64>) -> Self {
        Rotation(UnitQuaternion::from_scaled_axis(*phi))
    }

    /// Logarithmic map: rotation to rotation vector, `|log| < π`.
    pub fn log(&self) -> Vector3<f64> {
        self.0.scaled_axis()
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::exp(&Vector3::new(angle, 0.0, 0.0))
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::exp(&Vector3::new(0.0, angle, 0.0))
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::exp(&Vector3::new(0.0, 0.0, angle))
    }

    /// Quaternion components `[w, x, y, z]`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Rotation(UnitQuaternion::from_rotation_matrix(
            &nalgebra::Rotation3::from_matrix(m),
        ))
    }

    /// Composition, renormalized to guard against drift of the unit norm.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        let mut q = self.0 * other.0;
        q.renormalize_fast();
        Rotation(q)
    }

    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.inverse())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn inverse_rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.inverse_transform_vector(v)
    }

    /// Error-state retraction: `q ⊗ [1; θ̃/2]`, normalized.
    pub fn boxplus(&self, theta: &Vector3<f64>) -> Rotation {
        let d = Quaternion::new(1.0, 0.5 * theta.x, 0.5 * theta.y, 0.5 * theta.z);
        Rotation(UnitQuaternion::from_quaternion(self.0.quaternion() * d))
    }

    /// Inverse of [`Rotation::boxplus`]: `self ⊟ other` is the local rotation
    /// vector `θ̃` with `other ⊞ θ̃ == self`. Exact for angles below π.
    pub fn boxminus(&self, other: &Rotation) -> Vector3<f64> {
        let mut d = other.0.inverse() * self.0;
        // Take the short arc so the scalar part is positive.
        if d.quaternion().w < 0.0 {
            d = UnitQuaternion::from_quaternion(-*d.quaternion());
        }
        let q = d.quaternion();
        2.0 * Vector3::new(q.i, q.j, q.k) / q.w
    }

    /// Rotation angle to another rotation [rad].
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.0.angle_to(&other.0)
    }

    /// Intrinsic z-y-x Euler angles `(roll, pitch, yaw)` [rad].
    pub fn euler_angles(&self) -> (f64, f64, f64) {
        self.0.euler_angles()
    }

    pub fn unit_quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

/// Rigid-body transform: `x_parent = rot * x_child + trans`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Pose {
    pub rot: Rotation,
    pub trans: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rot: Rotation::identity(),
            trans: Vector3::zeros(),
        }
    }

    pub fn new(rot: Rotation, trans: Vector3<f64>) -> Self {
        Pose { rot, trans }
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rot: self.rot.compose(&other.rot),
            trans: self.trans + self.rot.rotate(&other.trans),
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv_rot = self.rot.inverse();
        Pose {
            rot: inv_rot,
            trans: -inv_rot.rotate(&self.trans),
        }
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot.rotate(p) + self.trans
    }

    pub fn inverse_transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rot.inverse_rotate(&(p - self.trans))
    }

    /// Retraction with a 6-vector `[δp, δθ]`.
    pub fn boxplus(&self, delta_p: &Vector3<f64>, delta_theta: &Vector3<f64>) -> Pose {
        Pose {
            rot: self.rot.boxplus(delta_theta),
            trans: self.trans + delta_p,
        }
    }

    /// Inverse retraction: `(δp, δθ)` with `other ⊞ (δp, δθ) == self`.
    pub fn boxminus(&self, other: &Pose) -> (Vector3<f64>, Vector3<f64>) {
        (self.trans - other.trans, self.rot.boxminus(&other.rot))
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

/// Coordinate frame tag for checked transform composition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    /// Fixed world frame.
    World,
    /// IMU body frame.
    Body,
    /// Radar sensor frame.
    Radar,
    /// Body frame cloned at a past scan, keyed by scan index.
    BodyAt(u64),
    /// Radar frame at a past scan, keyed by scan index.
    RadarAt(u64),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("frame mismatch: cannot chain {left:?} with {right:?}")]
pub struct FrameMismatch {
    pub left: Frame,
    pub right: Frame,
}

/// A pose carrying its parent/child frame tags; composition checks that the
/// chained tags agree.
#[derive(Clone, Copy, Debug)]
pub struct FramedPose {
    pub parent: Frame,
    pub child: Frame,
    pub pose: Pose,
}

impl FramedPose {
    pub fn new(parent: Frame, child: Frame, pose: Pose) -> Self {
        FramedPose { parent, child, pose }
    }

    /// `T_AB.compose(T_BC) = T_AC`; an inner tag mismatch is a contract
    /// violation and is rejected.
    pub fn compose(&self, other: &FramedPose) -> Result<FramedPose, FrameMismatch> {
        if self.child != other.parent {
            return Err(FrameMismatch {
                left: self.child,
                right: other.parent,
            });
        }
        Ok(FramedPose {
            parent: self.parent,
            child: other.child,
            pose: self.pose.compose(&other.pose),
        })
    }

    pub fn inverse(&self) -> FramedPose {
        FramedPose {
            parent: self.child,
            child: self.parent,
            pose: self.pose.inverse(),
        }
    }

    /// Maps a point tagged with the child frame into the parent frame.
    pub fn transform(&self, frame: Frame, p: &Vector3<f64>) -> Result<Vector3<f64>, FrameMismatch> {
        if frame != self.child {
            return Err(FrameMismatch {
                left: self.child,
                right: frame,
            });
        }
        Ok(self.pose.transform(p))
    }
}
