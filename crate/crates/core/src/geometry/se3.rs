//! Rigid body transforms and the SE(3) exponential/logarithm maps.
//!
//! Twists are ordered `(omega, rho)`: rotational part first, translational
//! part second. The exponential is `exp(omega, rho) = (R(omega), V(omega) rho)`
//! with `V` the left Jacobian of SO(3).

use nalgebra::{Matrix3, Matrix4, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::ops::Mul;

use super::quaternion::{hat, Quaternion};
use crate::error::{Error, Result};

/// Below this angle the Jacobian coefficients are evaluated from their power
/// series; above it the closed forms are well conditioned.
const SERIES_ANGLE: f64 = 1e-2;

/// Largest rotation angle accepted by [`se3_log`].
pub const MAX_LOG_ANGLE: f64 = std::f64::consts::PI - 1e-6;

/// Element of se(3): `[omega_x, omega_y, omega_z, rho_x, rho_y, rho_z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Twist(pub Vector6<f64>);

impl Twist {
    pub fn new(omega: Vector3<f64>, rho: Vector3<f64>) -> Self {
        Self(Vector6::new(omega.x, omega.y, omega.z, rho.x, rho.y, rho.z))
    }

    pub fn zero() -> Self {
        Self(Vector6::zeros())
    }

    pub fn from_slice(v: &[f64; 6]) -> Self {
        Self(Vector6::from_column_slice(v))
    }

    pub fn rotation(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.0[3], self.0[4], self.0[5])
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

/// Rigid transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SE3Pose {
    pub rotation: Quaternion,
    pub translation: Vector3<f64>,
}

impl Default for SE3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

/// Coefficients `(A, B)` of `V = I + A K + B K^2`.
fn left_jacobian_coefficients(theta: f64) -> (f64, f64) {
    let t2 = theta * theta;
    if theta < SERIES_ANGLE {
        let a = 0.5 - t2 / 24.0 + t2 * t2 / 720.0 - t2 * t2 * t2 / 40320.0;
        let b = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2 * t2 * t2 / 362880.0;
        (a, b)
    } else {
        let half_sin = (0.5 * theta).sin();
        let a = 2.0 * half_sin * half_sin / t2;
        let b = (theta - theta.sin()) / (t2 * theta);
        (a, b)
    }
}

/// Coefficient `C` of `V^-1 = I - K/2 + C K^2`.
fn inverse_left_jacobian_coefficient(theta: f64) -> f64 {
    let t2 = theta * theta;
    if theta < SERIES_ANGLE {
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0 + t2 * t2 * t2 / 1209600.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / t2
    }
}

/// Left Jacobian of SO(3).
pub fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let k = hat(omega);
    let (a, b) = left_jacobian_coefficients(omega.norm());
    Matrix3::identity() + a * k + b * k * k
}

/// Inverse of the left Jacobian of SO(3). Valid for angles below pi.
pub fn so3_left_jacobian_inverse(omega: &Vector3<f64>) -> Matrix3<f64> {
    let k = hat(omega);
    let c = inverse_left_jacobian_coefficient(omega.norm());
    Matrix3::identity() - 0.5 * k + c * k * k
}

/// Exponential map se(3) -> SE(3).
pub fn se3_exp(xi: &Twist) -> SE3Pose {
    let omega = xi.rotation();
    let rho = xi.translation();
    SE3Pose {
        rotation: Quaternion::from_rotation_vector(&omega),
        translation: so3_left_jacobian(&omega) * rho,
    }
}

/// Logarithm map SE(3) -> se(3).
///
/// Fails with [`Error::DegenerateRotation`] when the rotation angle is within
/// `1e-6` of pi, where the rotation axis sign is ambiguous.
pub fn se3_log(pose: &SE3Pose) -> Result<Twist> {
    let angle = pose.rotation.angle();
    if angle >= MAX_LOG_ANGLE {
        return Err(Error::DegenerateRotation { angle });
    }
    let omega = pose.rotation.to_rotation_vector();
    let rho = so3_left_jacobian_inverse(&omega) * pose.translation;
    Ok(Twist::new(omega, rho))
}

impl SE3Pose {
    pub fn identity() -> Self {
        Self { rotation: Quaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Quaternion, translation: Vector3<f64>) -> Self {
        Self { rotation: rotation.normalize(), translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { rotation: Quaternion::identity(), translation: t }
    }

    pub fn from_rotation_matrix(r: &Matrix3<f64>, t: Vector3<f64>) -> Self {
        Self { rotation: Quaternion::from_rotation_matrix(r), translation: t }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix()
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn compose(&self, other: &SE3Pose) -> SE3Pose {
        SE3Pose {
            rotation: (self.rotation * other.rotation).normalize(),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> SE3Pose {
        let r_inv = self.rotation.conjugate();
        SE3Pose { rotation: r_inv, translation: -r_inv.rotate(&self.translation) }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    /// `self^-1 * other`.
    pub fn between(&self, other: &SE3Pose) -> SE3Pose {
        self.inverse().compose(other)
    }

    /// Right retraction `self * exp(delta)`.
    pub fn retract(&self, delta: &Twist) -> SE3Pose {
        self.compose(&se3_exp(delta))
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Quaternion::identity() && self.translation == Vector3::zeros()
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.is_finite() && self.translation.iter().all(|v| v.is_finite())
    }

    /// Translation distance and rotation angle between two poses.
    pub fn distance(&self, other: &SE3Pose) -> (f64, f64) {
        let d = self.between(other);
        (d.translation.norm(), d.rotation.angle())
    }
}

impl Mul for SE3Pose {
    type Output = SE3Pose;
    fn mul(self, rhs: SE3Pose) -> SE3Pose {
        self.compose(&rhs)
    }
}

impl Mul<&SE3Pose> for &SE3Pose {
    type Output = SE3Pose;
    fn mul(self, rhs: &SE3Pose) -> SE3Pose {
        self.compose(rhs)
    }
}

pub fn compose(a: &SE3Pose, b: &SE3Pose) -> SE3Pose {
    a.compose(b)
}

pub fn inverse(t: &SE3Pose) -> SE3Pose {
    t.inverse()
}
