use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::quaternion::Quaternion;
use super::se3::SE3Pose;
use crate::error::{Error, Result};

/// Similarity transform `p -> s R p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sim3Transform {
    pub scale: f64,
    pub rotation: Quaternion,
    pub translation: Vector3<f64>,
}

impl Default for Sim3Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Sim3Transform {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: Quaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn new(scale: f64, rotation: Quaternion, translation: Vector3<f64>) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidValue(format!("similarity scale must be positive, got {scale}")));
        }
        Ok(Self { scale, rotation: rotation.normalize(), translation })
    }

    pub fn from_rigid(pose: &SE3Pose) -> Self {
        Self { scale: 1.0, rotation: pose.rotation, translation: pose.translation }
    }

    /// Rigid part, dropping the scale.
    pub fn rigid(&self) -> SE3Pose {
        SE3Pose { rotation: self.rotation, translation: self.translation }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix()
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * self.rotation.rotate(p) + self.translation
    }

    pub fn compose(&self, other: &Sim3Transform) -> Sim3Transform {
        Sim3Transform {
            scale: self.scale * other.scale,
            rotation: (self.rotation * other.rotation).normalize(),
            translation: self.scale * self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Sim3Transform {
        let r_inv = self.rotation.conjugate();
        let s_inv = 1.0 / self.scale;
        Sim3Transform {
            scale: s_inv,
            rotation: r_inv,
            translation: -s_inv * r_inv.rotate(&self.translation),
        }
    }

    /// Maps a camera pose through the similarity: rotation is composed, the
    /// camera center is transformed as a point.
    pub fn transform_pose(&self, pose: &SE3Pose) -> SE3Pose {
        SE3Pose {
            rotation: (self.rotation * pose.rotation).normalize(),
            translation: self.transform_point(&pose.translation),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0
            && self.rotation == Quaternion::identity()
            && self.translation == Vector3::zeros()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_positive_scale() {
        assert!(Sim3Transform::new(0.0, Quaternion::identity(), Vector3::zeros()).is_err());
        assert!(Sim3Transform::new(-1.0, Quaternion::identity(), Vector3::zeros()).is_err());
    }

    #[test]
    fn inverse_round_trip() {
        let s = Sim3Transform::new(2.5, Quaternion::new(0.3, 0.1, -0.7, 0.2), Vector3::new(1.0, -2.0, 0.3))
            .unwrap();
        let p = Vector3::new(0.4, 0.5, -1.5);
        let back = s.inverse().transform_point(&s.transform_point(&p));
        assert!((back - p).norm() < 1e-14);
        let id = s.compose(&s.inverse());
        assert!((id.scale - 1.0).abs() < 1e-15);
        assert!(id.translation.norm() < 1e-14);
    }
}
