use nalgebra::Vector3;
use slam_core::geometry::PointMap;
use slam_core::posegraph::{alignment_conditioning, detect_loops, pixel_normals, KeyframeEntry, LoopConfig};
use slam_core::synth::{generate, two_room_loop, SyntheticSequence};

fn entry(seq: &SyntheticSequence, frame: usize, submap: usize) -> KeyframeEntry {
    KeyframeEntry::new(frame, submap, seq.poses[frame], seq.render_points(frame).unwrap())
}

#[test]
fn outbound_path_has_no_loops() {
    let seq = generate(&two_room_loop(0, 300)).unwrap();
    // The first 40% of the script walks from room one into room two without
    // looking back.
    let frames: Vec<usize> = (0..seq.len() * 2 / 5).step_by(6).collect();
    let db: Vec<_> = frames.iter().filter(|&&f| f < 40).map(|&f| entry(&seq, f, f / 20)).collect();
    let query: Vec<_> = frames.iter().filter(|&&f| f >= 90).map(|&f| entry(&seq, f, 6)).collect();
    let found = detect_loops(&query, &db, None, &LoopConfig::default()).unwrap();
    assert!(found.is_empty(), "{found:?}");
}

#[test]
fn exact_revisit_is_found_with_identity_transform() {
    let seq = generate(&two_room_loop(1, 300)).unwrap();
    let db: Vec<_> = [0, 10, 20, 30].iter().map(|&f| entry(&seq, f, 0)).collect();
    let query = vec![entry(&seq, 20, 5)];
    let found = detect_loops(&query, &db, None, &LoopConfig::default()).unwrap();
    assert_eq!(found.len(), 1);
    let c = &found[0];
    assert_eq!((c.query, c.matched, c.query_submap, c.match_submap), (20, 20, 5, 0));
    assert!(c.score > 0.99);
    let (dt, dr) = c.relative.distance(&slam_core::geometry::SE3Pose::identity());
    assert!(dt < 1e-6 && dr < 1e-6, "{dt} {dr}");
}

#[test]
fn planar_views_fail_the_conditioning_gate() {
    let wall = |shift: f64| {
        let (w, h) = (32, 24);
        let points = (0..w * h)
            .map(|i| Vector3::new((i % w) as f64 * 0.02 - 0.3 + shift, (i / w) as f64 * 0.02 - 0.2, 1.5))
            .collect();
        PointMap::from_points(w, h, points).unwrap()
    };
    let a = wall(0.0);
    let normals = pixel_normals(&a);
    let pairs: Vec<_> = a.points().iter().zip(&normals).filter_map(|(p, n)| n.map(|n| (*p, n))).collect();
    assert!(alignment_conditioning(&pairs) < 1e-9);

    let pose = slam_core::geometry::SE3Pose::identity();
    let db = vec![KeyframeEntry::new(0, 0, pose, a)];
    let query = vec![KeyframeEntry::new(50, 4, pose, wall(0.1))];
    assert!(detect_loops(&query, &db, None, &LoopConfig::default()).unwrap().is_empty());
    let loose = LoopConfig { min_conditioning: 0.0, ..Default::default() };
    // Without the gate the slid alignment is accepted.
    assert_eq!(detect_loops(&query, &db, None, &loose).unwrap().len(), 1);
}
