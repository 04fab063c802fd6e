use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Quaternion, SE3Pose};

/// Axis-aligned box in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.min[i].is_finite() && self.max[i].is_finite() && self.max[i] > self.min[i])
    }

    /// Inclusive containment.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_strictly(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] > self.min[i] && p[i] < self.max[i])
    }

    /// Parameter at which a ray starting inside leaves the box, with the
    /// outward face normal.
    fn exit(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let mut best = (f64::INFINITY, Vector3::zeros());
        for i in 0..3 {
            if d[i] > 0.0 {
                let t = (self.max[i] - o[i]) / d[i];
                if t < best.0 {
                    best = (t, unit(i, 1.0));
                }
            } else if d[i] < 0.0 {
                let t = (self.min[i] - o[i]) / d[i];
                if t < best.0 {
                    best = (t, unit(i, -1.0));
                }
            }
        }
        best
    }

    /// First entry parameter `t > 0` of a ray from outside, with the face normal.
    fn entry(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        let mut axis = None;
        for i in 0..3 {
            if d[i] == 0.0 {
                if o[i] < self.min[i] || o[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let (a, b) = ((self.min[i] - o[i]) / d[i], (self.max[i] - o[i]) / d[i]);
            let (near, far) = if a < b { (a, b) } else { (b, a) };
            if near > t0 {
                t0 = near;
                axis = Some(i);
            }
            t1 = t1.min(far);
        }
        let i = axis?;
        (t0 <= t1 && t0 > 0.0).then(|| (t0, unit(i, -d[i].signum())))
    }
}

fn unit(axis: usize, sign: f64) -> Vector3<f64> {
    let mut v = Vector3::zeros();
    v[axis] = sign;
    v
}

/// Hollow rooms (whose union is walkable space) and solid objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub rooms: Vec<Aabb>,
    pub objects: Vec<Aabb>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vector3<f64>,
    /// Surface normal facing the ray origin.
    pub normal: Vector3<f64>,
    /// Index into rooms followed by objects.
    pub surface: usize,
}

impl Layout {
    pub fn validate(&self) -> Result<()> {
        if self.rooms.is_empty() {
            return Err(Error::InvalidConfig("scene needs at least one room".into()));
        }
        if let Some(b) = self.rooms.iter().chain(&self.objects).find(|b| !b.is_valid()) {
            return Err(Error::InvalidConfig(format!("degenerate box {b:?}")));
        }
        Ok(())
    }

    pub fn is_free(&self, p: &Vector3<f64>) -> bool {
        self.rooms.iter().any(|r| r.contains_strictly(p)) && !self.objects.iter().any(|o| o.contains(p))
    }

    /// Casts a ray from a free-space origin. The ray crosses from room to
    /// room wherever the exit point lies strictly inside another room.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut object_hit: Option<Hit> = None;
        for (k, o) in self.objects.iter().enumerate() {
            if let Some((t, n)) = o.entry(origin, dir) {
                if object_hit.is_none_or(|h| t < h.t) {
                    object_hit = Some(Hit { t, point: origin + t * dir, normal: n, surface: self.rooms.len() + k });
                }
            }
        }
        let wall = self.wall_hit(origin, dir);
        match (wall, object_hit) {
            (Some(w), Some(o)) => Some(if o.t < w.t { o } else { w }),
            (w, o) => w.or(o),
        }
    }

    fn wall_hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut room = self.rooms.iter().position(|r| r.contains(origin))?;
        let mut t_start = 0.0;
        for _ in 0..=self.rooms.len() * 2 {
            let o = origin + t_start * dir;
            let (dt, n) = self.rooms[room].exit(&o, dir);
            if !dt.is_finite() {
                return None;
            }
            let t = t_start + dt;
            let p = origin + t * dir;
            // A room containing the exit point strictly, which extends further along the ray.
            let next = self.rooms.iter().enumerate().find(|(k, r)| {
                *k != room && r.contains_strictly(&p) && r.exit(&p, dir).0 > 1e-12
            });
            match next {
                Some((k, _)) => {
                    room = k;
                    t_start = t;
                }
                None => return Some(Hit { t, point: p, normal: -n, surface: room }),
            }
        }
        None
    }

    /// Visible-surface samples on a regular grid of `spacing` per face.
    pub fn sample_surfaces(&self, spacing: f64) -> Vec<Vector3<f64>> {
        let mut out = Vec::new();
        for room in &self.rooms {
            for p in face_grid(room, spacing) {
                let covered = self.rooms.iter().any(|r| r != room && r.contains_strictly(&p))
                    || self.objects.iter().any(|o| o.contains_strictly(&p));
                if !covered {
                    out.push(p);
                }
            }
        }
        for obj in &self.objects {
            for p in face_grid(obj, spacing) {
                let in_room = self.rooms.iter().any(|r| r.contains_strictly(&p));
                let covered = self.objects.iter().any(|o| o != obj && o.contains_strictly(&p));
                if in_room && !covered {
                    out.push(p);
                }
            }
        }
        out
    }
}

fn face_grid(b: &Aabb, spacing: f64) -> Vec<Vector3<f64>> {
    let mut out = Vec::new();
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let nu = ((b.max[u] - b.min[u]) / spacing).round().max(1.0) as usize;
        let nv = ((b.max[v] - b.min[v]) / spacing).round().max(1.0) as usize;
        for side in [b.min[axis], b.max[axis]] {
            for i in 0..nu {
                for j in 0..nv {
                    let mut p = Vector3::zeros();
                    p[axis] = side;
                    p[u] = b.min[u] + (i as f64 + 0.5) * (b.max[u] - b.min[u]) / nu as f64;
                    p[v] = b.min[v] + (j as f64 + 0.5) * (b.max[v] - b.min[v]) / nv as f64;
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Camera pose (world-from-camera, x right, y down, z forward) for a
/// z-up world, heading `yaw` about +z and `pitch` above the horizon.
pub fn camera_pose(position: Vector3<f64>, yaw: f64, pitch: f64) -> SE3Pose {
    let f = Vector3::new(yaw.cos() * pitch.cos(), yaw.sin() * pitch.cos(), pitch.sin());
    let r = Vector3::new(yaw.sin(), -yaw.cos(), 0.0);
    let d = f.cross(&r);
    let m = Matrix3::from_columns(&[r, d, f]);
    SE3Pose::new(Quaternion::from_rotation_matrix(&m), position)
}
