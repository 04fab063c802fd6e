//! Lie-group and point-set primitives.

mod ply;
mod pointmap;
mod quaternion;
mod se3;
mod sim3;
mod trajectory;

pub use ply::PointCloud;
pub use pointmap::{apply, ConfidenceMap, PointMap, PointTransform};
pub use quaternion::{hat, Quaternion};
pub use se3::{
    compose, inverse, se3_exp, se3_log, so3_left_jacobian, so3_left_jacobian_inverse, SE3Pose, Twist,
    MAX_LOG_ANGLE,
};
pub use sim3::Sim3Transform;
pub use trajectory::{format_significant, format_timestamp, Trajectory};

pub(crate) use trajectory::quaternion_from_file;
