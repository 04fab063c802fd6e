use nalgebra::Vector3;
use proptest::prelude::*;
use slam_core::geometry::{se3_exp, se3_log, PointCloud, SE3Pose, Trajectory, Twist, MAX_LOG_ANGLE};
use slam_core::local_align::umeyama;

fn vec3(scale: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-scale..scale).prop_map(Vector3::from)
}

fn twist() -> impl Strategy<Value = Twist> {
    (vec3(1.0), vec3(3.0)).prop_map(|(w, t)| {
        let n = w.norm();
        let w = if n > 3.0 { w * (3.0 / n) } else { w };
        Twist::new(w, t)
    })
}

fn pose() -> impl Strategy<Value = SE3Pose> {
    twist().prop_map(|t| se3_exp(&t))
}

proptest! {
    #[test]
    fn log_inverts_exp(xi in twist()) {
        prop_assume!(xi.rotation().norm() < MAX_LOG_ANGLE);
        let back = se3_log(&se3_exp(&xi)).unwrap();
        prop_assert!((back.rotation() - xi.rotation()).norm() < 1e-9);
        prop_assert!((back.translation() - xi.translation()).norm() < 1e-9);
    }

    #[test]
    fn composition_is_associative(a in pose(), b in pose(), c in pose(), p in vec3(2.0)) {
        let left = a.compose(&b).compose(&c).transform_point(&p);
        let right = a.compose(&b.compose(&c)).transform_point(&p);
        prop_assert!((left - right).norm() < 1e-10);
    }

    #[test]
    fn inverse_undoes_transform(a in pose(), p in vec3(5.0)) {
        let q = a.inverse().transform_point(&a.transform_point(&p));
        prop_assert!((q - p).norm() < 1e-10);
        prop_assert!(a.compose(&a.inverse()).distance(&SE3Pose::identity()).0 < 1e-10);
    }

    #[test]
    fn quaternions_stay_unit_and_canonical(a in pose(), b in pose()) {
        let q = a.compose(&b).rotation;
        prop_assert!((q.norm() - 1.0).abs() < 1e-12);
        prop_assert!(q.as_array()[0] >= 0.0);
    }

    #[test]
    fn retraction_is_right_multiplication(a in pose(), xi in twist()) {
        let (dt, dr) = a.retract(&xi).distance(&a.compose(&se3_exp(&xi)));
        prop_assert!(dt < 1e-12 && dr < 1e-12);
    }

    #[test]
    fn umeyama_recovers_rigid_motion(a in pose(), pts in prop::collection::vec(vec3(2.0), 4..40)) {
        let spread = pts.iter().map(|p| (p - pts[0]).norm()).fold(0.0, f64::max);
        prop_assume!(spread > 0.5);
        let moved: Vec<_> = pts.iter().map(|p| a.transform_point(p)).collect();
        if let Ok(fit) = umeyama(&pts, &moved, false) {
            for (p, m) in pts.iter().zip(&moved) {
                prop_assert!((fit.transform_point(p) - m).norm() < 1e-8);
            }
            prop_assert!(fit.rotation_matrix().determinant() > 0.0);
        }
    }

    #[test]
    fn tum_round_trip_is_byte_stable(poses in prop::collection::vec(pose(), 1..20), t0 in 0.0..2e9f64) {
        let entries = poses.into_iter().enumerate().map(|(i, p)| (t0 + i as f64 * 0.05, p)).collect();
        let text = Trajectory::from_entries(entries).unwrap().to_tum();
        let again = Trajectory::from_tum(&text).unwrap().to_tum();
        prop_assert_eq!(text, again);
    }

    #[test]
    fn ply_round_trip_is_exact(pts in prop::collection::vec((vec3(100.0), 0.0..10.0f64), 0..50)) {
        let mut cloud = PointCloud::new();
        for (p, c) in pts {
            cloud.push(p, c);
        }
        prop_assert_eq!(PointCloud::from_ply(&cloud.to_ply()).unwrap(), cloud);
    }
}
