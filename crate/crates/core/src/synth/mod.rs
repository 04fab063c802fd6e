//! Synthetic rooms, ray-cast renders and the oracle predictor.

mod oracle;
mod scene;

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, PointMap, SE3Pose, Trajectory};
use crate::predictor::{FrameInput, Image};

pub use oracle::{NoiseSpec, OraclePredictor, OracleState};
pub use scene::{camera_pose, Aabb, Hit, Layout};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub position: [f64; 3],
    /// Heading about +z in radians.
    pub yaw: f64,
    /// Elevation above the horizon in radians.
    #[serde(default)]
    pub pitch: f64,
    /// Extra frames spent standing still at this waypoint.
    #[serde(default)]
    pub hold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryScript {
    pub waypoints: Vec<Waypoint>,
    /// Meters per second.
    pub linear_speed: f64,
    /// Radians per second.
    pub angular_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub layout: Layout,
    /// Ground-truth surface samples per square meter.
    pub density: f64,
    pub trajectory: TrajectoryScript,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
}

fn default_fov() -> f64 {
    60.0
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        let t = &self.trajectory;
        if t.waypoints.is_empty() {
            return Err(Error::InvalidConfig("trajectory needs at least one waypoint".into()));
        }
        let positive = [self.density, self.fps, t.linear_speed, t.angular_speed];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig("density, fps and speeds must be positive".into()));
        }
        if self.width == 0 || self.height == 0 || !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::InvalidConfig("invalid camera resolution or field of view".into()));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.fov_deg.to_radians()).tan()
    }

    /// Camera ray (unnormalized, unit depth) through the center of a pixel.
    pub fn pixel_ray(&self, row: usize, col: usize) -> Vector3<f64> {
        let f = self.focal();
        Vector3::new(
            (col as f64 + 0.5 - 0.5 * self.width as f64) / f,
            (row as f64 + 0.5 - 0.5 * self.height as f64) / f,
            1.0,
        )
    }
}

/// Interpolated camera poses for a script.
fn script_poses(spec: &SceneSpec) -> Vec<(Vector3<f64>, f64, f64)> {
    let t = &spec.trajectory;
    let mut out = Vec::new();
    let state = |w: &Waypoint| (Vector3::from(w.position), w.yaw, w.pitch);
    for pair in t.waypoints.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        out.extend(std::iter::repeat_n(state(a), a.hold + 1));
        let dist = (Vector3::from(b.position) - Vector3::from(a.position)).norm();
        let turn = (b.yaw - a.yaw).abs().max((b.pitch - a.pitch).abs());
        let seconds = (dist / t.linear_speed).max(turn / t.angular_speed);
        let steps = (seconds * spec.fps).ceil().max(1.0) as usize;
        for k in 1..steps {
            let s = k as f64 / steps as f64;
            out.push((
                Vector3::from(a.position).lerp(&Vector3::from(b.position), s),
                a.yaw + s * (b.yaw - a.yaw),
                a.pitch + s * (b.pitch - a.pitch),
            ));
        }
    }
    let last = t.waypoints.last().expect("validated");
    out.extend(std::iter::repeat_n(state(last), last.hold + 1));
    out
}

/// A generated sequence. Frames are rendered on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    pub spec: SceneSpec,
    /// World-from-camera ground-truth poses.
    pub poses: Vec<SE3Pose>,
    pub timestamps: Vec<f64>,
}

/// Checks poses and the straight path between consecutive poses, at
/// centimeter spacing, against free space.
fn check_free_space(layout: &Layout, positions: &[Vector3<f64>]) -> Result<()> {
    for (i, p) in positions.iter().enumerate() {
        if !layout.is_free(p) {
            return Err(Error::OutsideFreeSpace { frame: i });
        }
        if i > 0 {
            let prev = positions[i - 1];
            let steps = ((p - prev).norm() / 0.01).ceil() as usize;
            for k in 1..steps {
                if !layout.is_free(&prev.lerp(p, k as f64 / steps as f64)) {
                    return Err(Error::OutsideFreeSpace { frame: i });
                }
            }
        }
    }
    Ok(())
}

pub fn generate(spec: &SceneSpec) -> Result<SyntheticSequence> {
    spec.validate()?;
    let states = script_poses(spec);
    let positions: Vec<_> = states.iter().map(|s| s.0).collect();
    check_free_space(&spec.layout, &positions)?;
    let poses = states.iter().map(|(p, yaw, pitch)| camera_pose(*p, *yaw, *pitch)).collect();
    let timestamps = (0..states.len()).map(|i| i as f64 / spec.fps).collect();
    Ok(SyntheticSequence { spec: spec.clone(), poses, timestamps })
}

/// Albedo per surface with a world-space checker pattern.
fn shade(hit: &Hit, depth: f64) -> [f64; 3] {
    let hue = (hit.surface as f64 * 0.618_033_988_75).fract();
    let base = [0.5 + 0.4 * (std::f64::consts::TAU * hue).cos(), 0.5 + 0.4 * (std::f64::consts::TAU * (hue + 0.33)).cos(), 0.5 + 0.4 * (std::f64::consts::TAU * (hue + 0.67)).cos()];
    let light = Vector3::new(0.3, 0.5, 0.8).normalize();
    let lambert = 0.35 + 0.65 * hit.normal.dot(&light).abs();
    let cell = (hit.point * 4.0).map(|v| v.floor() as i64);
    let checker = if (cell.x + cell.y + cell.z).rem_euclid(2) == 0 { 1.0 } else { 0.8 };
    let fog = (-0.1 * depth).exp();
    base.map(|c| (c * lambert * checker * fog).clamp(0.0, 1.0))
}

impl SyntheticSequence {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    fn cast_frame(&self, frame: usize) -> Result<Vec<Option<(Hit, Vector3<f64>)>>> {
        let pose = self.poses.get(frame).ok_or(Error::OutOfRange { index: frame, len: self.len() })?;
        let r = pose.rotation_matrix();
        let (w, h) = (self.spec.width, self.spec.height);
        let mut out = Vec::with_capacity(w * h);
        for row in 0..h {
            for col in 0..w {
                let ray = self.spec.pixel_ray(row, col);
                let hit = self.spec.layout.cast(&pose.translation, &(r * ray));
                out.push(hit.map(|hit| (hit, ray * hit.t)));
            }
        }
        Ok(out)
    }

    /// Ground-truth camera-frame pointmap of a frame.
    pub fn render_points(&self, frame: usize) -> Result<PointMap> {
        let hits = self.cast_frame(frame)?;
        let mut map = PointMap::empty(self.spec.width, self.spec.height);
        for (i, h) in hits.iter().enumerate() {
            if let Some((_, p)) = h {
                map.set(i, Some(*p));
            }
        }
        Ok(map)
    }

    /// Shaded RGB image of a frame.
    pub fn render_image(&self, frame: usize) -> Result<Image> {
        let hits = self.cast_frame(frame)?;
        let mut data = Vec::with_capacity(hits.len() * 3);
        for h in &hits {
            match h {
                Some((hit, p)) => data.extend_from_slice(&shade(hit, p.z)),
                None => data.extend_from_slice(&[0.0; 3]),
            }
        }
        Image::new(self.spec.width, self.spec.height, data)
    }

    /// Ground-truth world points of one frame.
    pub fn world_points(&self, frame: usize) -> Result<PointCloud> {
        let map = self.render_points(frame)?;
        let pose = self.poses[frame];
        Ok(PointCloud::from_points(map.valid_points().map(|(_, p)| pose.transform_point(p)).collect()))
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory::from_entries(self.timestamps.iter().copied().zip(self.poses.iter().copied()).collect())
            .expect("timestamps increase")
    }

    /// Surface samples of the whole scene at the spec density.
    pub fn ground_truth_cloud(&self) -> PointCloud {
        PointCloud::from_points(self.spec.layout.sample_surfaces(1.0 / self.spec.density.sqrt()))
    }

    /// Frame input with a rendered image.
    pub fn with_input<T>(&self, frame: usize, f: impl FnOnce(&FrameInput<'_>) -> Result<T>) -> Result<T> {
        let image = self.render_image(frame)?;
        f(&FrameInput { index: frame, image: &image })
    }

    /// Writes `scene.json`, `gt_traj.tum` and `frame_%05d.ply` (world frame).
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("scene.json"), serde_json::to_string_pretty(&self.spec)? + "\n")?;
        std::fs::write(dir.join("gt_traj.tum"), self.trajectory().to_tum())?;
        for i in 0..self.len() {
            std::fs::write(dir.join(format!("frame_{i:05}.ply")), self.world_points(i)?.to_ply())?;
        }
        Ok(())
    }

    /// Regenerates a sequence from `scene.json` and checks it against the
    /// stored trajectory.
    pub fn read_from(dir: &Path) -> Result<Self> {
        let spec: SceneSpec = serde_json::from_str(&std::fs::read_to_string(dir.join("scene.json"))?)?;
        let seq = generate(&spec)?;
        let stored = std::fs::read_to_string(dir.join("gt_traj.tum"))?;
        if stored != seq.trajectory().to_tum() {
            return Err(Error::InvalidValue(format!("{} does not match scene.json", dir.join("gt_traj.tum").display())));
        }
        Ok(seq)
    }
}

/// Two rooms joined by a doorway with furniture; the camera leaves the
/// first room, circles the second and returns to its start pose.
pub fn two_room_loop(seed: u64, frames_target: usize) -> SceneSpec {
    let layout = Layout {
        rooms: vec![
            Aabb::new([0.0, 0.0, 0.0], [4.0, 3.0, 2.5]),
            Aabb::new([4.2, 0.0, 0.0], [8.2, 3.0, 2.5]),
            Aabb::new([3.9, 1.0, 0.0], [4.3, 2.0, 2.1]),
        ],
        objects: vec![
            Aabb::new([0.3, 0.3, 0.0], [1.1, 1.0, 0.75]),
            Aabb::new([2.6, 2.3, 0.0], [3.6, 2.8, 1.6]),
            Aabb::new([0.2, 2.2, 0.0], [0.6, 2.8, 1.2]),
            Aabb::new([1.8, 0.2, 0.0], [2.4, 0.5, 0.4]),
            Aabb::new([5.0, 0.3, 0.0], [6.0, 0.9, 0.9]),
            Aabb::new([7.4, 1.2, 0.0], [7.9, 2.6, 1.8]),
            Aabb::new([5.2, 2.4, 0.0], [5.8, 2.8, 0.5]),
            Aabb::new([6.4, 1.3, 0.0], [6.8, 1.7, 1.1]),
        ],
    };
    let pitch = -0.25;
    let wp = |x: f64, y: f64, yaw: f64| Waypoint { position: [x, y, 1.3], yaw, pitch, hold: 0 };
    let pi = std::f64::consts::PI;
    let waypoints = vec![
        wp(1.5, 1.6, 0.4),
        wp(2.2, 1.5, 0.0),
        wp(3.4, 1.5, 0.0),
        wp(4.6, 1.5, 0.0),
        wp(5.4, 1.3, -0.4),
        wp(6.4, 0.9, 0.2),
        wp(7.0, 1.5, 0.9),
        wp(6.4, 2.1, 1.9),
        wp(5.5, 2.0, pi),
        wp(4.6, 1.5, pi),
        wp(3.4, 1.5, pi),
        wp(2.4, 1.6, pi + 0.5),
        wp(1.6, 1.9, pi + 1.2),
        wp(1.3, 1.5, 2.0 * pi - 0.3),
        wp(1.5, 1.6, 2.0 * pi + 0.4),
    ];
    let mut spec = SceneSpec {
        seed,
        layout,
        density: 2500.0,
        trajectory: TrajectoryScript { waypoints, linear_speed: 0.3, angular_speed: 0.35 },
        fps: 30.0,
        width: 64,
        height: 48,
        fov_deg: 60.0,
    };
    // Scale the clock so the script spans roughly the requested frame count.
    let n = script_poses(&spec).len() as f64;
    spec.fps *= frames_target as f64 / n;
    spec
}

/// One furnished room; the camera pans across it along a short arc.
pub fn single_room(seed: u64, frames_target: usize) -> SceneSpec {
    let layout = Layout {
        rooms: vec![Aabb::new([0.0, 0.0, 0.0], [4.0, 3.0, 2.5])],
        objects: vec![
            Aabb::new([0.3, 0.3, 0.0], [1.1, 1.0, 0.75]),
            Aabb::new([2.6, 2.3, 0.0], [3.6, 2.8, 1.6]),
            Aabb::new([3.2, 0.4, 0.0], [3.7, 0.9, 1.0]),
        ],
    };
    let wp = |x: f64, y: f64, yaw: f64| Waypoint { position: [x, y, 1.3], yaw, pitch: -0.3, hold: 0 };
    let waypoints = vec![wp(1.0, 1.5, -0.3), wp(1.6, 1.4, 0.1), wp(2.2, 1.5, 0.5)];
    let mut spec = SceneSpec {
        seed,
        layout,
        density: 2500.0,
        trajectory: TrajectoryScript { waypoints, linear_speed: 0.3, angular_speed: 0.35 },
        fps: 30.0,
        width: 64,
        height: 48,
        fov_deg: 60.0,
    };
    let n = script_poses(&spec).len() as f64;
    spec.fps *= frames_target as f64 / n;
    spec
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::Predictor;

    fn unit_box(waypoints: Vec<Waypoint>) -> SceneSpec {
        SceneSpec {
            seed: 3,
            layout: Layout { rooms: vec![Aabb::new([-1.0, -1.0, 0.0], [1.0, 3.0, 2.0])], objects: vec![] },
            density: 400.0,
            trajectory: TrajectoryScript { waypoints, linear_speed: 0.5, angular_speed: 0.5 },
            fps: 10.0,
            width: 8,
            height: 6,
            fov_deg: 60.0,
        }
    }

    #[test]
    fn static_pose_gives_identical_frames() {
        let w = Waypoint { position: [0.0, 0.0, 1.0], yaw: 1.0, pitch: 0.0, hold: 4 };
        let seq = generate(&unit_box(vec![w])).unwrap();
        assert_eq!(seq.len(), 5);
        let first = seq.render_points(0).unwrap();
        for i in 1..5 {
            assert_eq!(seq.render_points(i).unwrap(), first);
        }
    }

    #[test]
    fn wall_ahead_gives_exact_depth() {
        // Facing +y from y = 1 toward the wall at y = 3.
        let w = Waypoint { position: [0.0, 1.0, 1.0], yaw: std::f64::consts::FRAC_PI_2, pitch: 0.0, hold: 0 };
        let seq = generate(&unit_box(vec![w])).unwrap();
        let map = seq.render_points(0).unwrap();
        let center = map.point(3, 4).unwrap();
        assert!((center.z - 2.0).abs() < 1e-12);
    }

    #[test]
    fn trajectory_through_wall_is_rejected() {
        let a = Waypoint { position: [0.0, 0.0, 1.0], yaw: 0.0, pitch: 0.0, hold: 0 };
        let b = Waypoint { position: [2.0, 0.0, 1.0], ..a };
        assert!(matches!(generate(&unit_box(vec![a, b])), Err(Error::OutsideFreeSpace { .. })));
    }

    #[test]
    fn oracle_zero_noise_is_ground_truth() {
        let spec = two_room_loop(1, 60);
        let seq = generate(&spec).unwrap();
        let oracle = OraclePredictor::new(&seq, NoiseSpec::default()).unwrap();
        let (state, _) = seq.with_input(5, |f| oracle.step(&oracle.initial_state(), f)).unwrap();
        let (_, pred) = seq.with_input(9, |f| oracle.step(&state, f)).unwrap();
        assert_eq!(pred, oracle.ground_truth(5, 9).unwrap());
        let expected = seq.poses[5].between(&seq.poses[9]);
        assert_eq!(pred.pose, expected);
    }

    #[test]
    fn translation_drift_accumulates_linearly() {
        let spec = two_room_loop(1, 150);
        let seq = generate(&spec).unwrap();
        let noise = NoiseSpec { drift_trans: 0.001, ..Default::default() };
        let oracle = OraclePredictor::new(&seq, noise).unwrap();
        let (state, _) = seq.with_input(0, |f| oracle.step(&oracle.initial_state(), f)).unwrap();
        let (_, pred) = seq.with_input(100, |f| oracle.step(&state, f)).unwrap();
        let truth = seq.poses[0].between(&seq.poses[100]);
        let offset = pred.pose.translation - truth.translation;
        assert!((offset - Vector3::new(0.1, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = two_room_loop(4, 40);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    }
}
