//! Loop-closure detection between keyframes of non-adjacent submaps.
//!
//! Candidates are ranked by a coarse view descriptor of the camera-frame
//! pointmap, verified by ICP of the two camera-frame clouds, and scored by
//! covisibility after that alignment.

use nalgebra::{Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::PoseGraph;
use crate::error::{Error, Result};
use crate::eval::{icp, IcpConfig};
use crate::frontend::CovisibilityIndex;
use crate::geometry::{apply, se3_exp, PointMap, SE3Pose, Sim3Transform, Twist};
use crate::spatial::KdTree;

/// Cells per side of the view descriptor grid.
const DESCRIPTOR_GRID: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub tau_loop: f64,
    /// Minimum submap id difference between query and match.
    pub min_submap_gap: usize,
    /// Database entries verified per query keyframe.
    pub candidates: usize,
    pub radius: f64,
    pub stride: usize,
    pub icp: IcpConfig,
    /// Reject loops whose transform disagrees with the current graph estimate
    /// by more than this translation (m) and rotation (rad).
    pub max_graph_disagreement: Option<(f64, f64)>,
    /// Reject alignments whose point-to-plane conditioning (see
    /// [`alignment_conditioning`]) falls below this value.
    pub min_conditioning: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            tau_loop: 0.5,
            min_submap_gap: 2,
            candidates: 3,
            radius: 0.05,
            stride: 4,
            icp: IcpConfig { max_iters: 50, rel_tol: 1e-6, max_points: 2000, max_distance: Some(0.25) },
            max_graph_disagreement: Some((1.5, 0.8)),
            min_conditioning: 0.01,
        }
    }
}

/// A keyframe as stored for loop queries.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeEntry {
    pub frame: usize,
    pub submap: usize,
    /// Camera pose in its submap frame.
    pub pose: SE3Pose,
    /// Camera-frame pointmap.
    pub points: PointMap,
    pub descriptor: Vec<f64>,
}

impl KeyframeEntry {
    pub fn new(frame: usize, submap: usize, pose: SE3Pose, points: PointMap) -> Self {
        let descriptor = view_descriptor(&points);
        Self { frame, submap, pose, points, descriptor }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopCandidate {
    pub query: usize,
    pub matched: usize,
    pub score: f64,
    /// Camera of `matched` from camera of `query`.
    pub relative: SE3Pose,
    /// Submap constraint `T_match^-1 T_query`.
    pub delta: SE3Pose,
    pub query_submap: usize,
    pub match_submap: usize,
}

/// Mean camera-frame point per cell of a coarse pixel grid; empty cells are
/// `NaN`.
pub fn view_descriptor(points: &PointMap) -> Vec<f64> {
    let (w, h) = (points.width(), points.height());
    let mut sums = vec![[0.0f64; 4]; DESCRIPTOR_GRID * DESCRIPTOR_GRID];
    for (i, p) in points.valid_points() {
        let (r, c) = (i / w, i % w);
        let cell = (r * DESCRIPTOR_GRID / h) * DESCRIPTOR_GRID + c * DESCRIPTOR_GRID / w;
        let s = &mut sums[cell];
        s[0] += p.x;
        s[1] += p.y;
        s[2] += p.z;
        s[3] += 1.0;
    }
    sums.iter()
        .flat_map(|s| if s[3] > 0.0 { [s[0] / s[3], s[1] / s[3], s[2] / s[3]] } else { [f64::NAN; 3] })
        .collect()
}

/// Unit normal per pixel from central differences of the pointmap. Pixels on
/// the border, next to invalid pixels or across depth jumps get `None`.
pub fn pixel_normals(points: &PointMap) -> Vec<Option<Vector3<f64>>> {
    let (w, h) = (points.width(), points.height());
    let mut out = vec![None; w * h];
    for r in 1..h.saturating_sub(1) {
        for c in 1..w.saturating_sub(1) {
            let (Some(p), Some(l), Some(rt), Some(u), Some(d)) = (
                points.point(r, c),
                points.point(r, c - 1),
                points.point(r, c + 1),
                points.point(r - 1, c),
                points.point(r + 1, c),
            ) else {
                continue;
            };
            let (dx, dy) = (rt - l, d - u);
            let limit = 0.1 * p.norm();
            if dx.norm() > limit || dy.norm() > limit {
                continue;
            }
            let n = dx.cross(&dy);
            let len = n.norm();
            if len > 0.0 {
                out[r * w + c] = Some(n / len);
            }
        }
    }
    out
}

/// Smallest eigenvalue of `mean(J^T J)` over point-to-plane pairs, with
/// `J = [(p - c) x n / L, n]`, `c` the centroid and `L` the RMS radius of the
/// points. Lies in `[0, 1]`; pairs on a single plane give 0.
pub fn alignment_conditioning(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> f64 {
    if pairs.len() < 6 {
        return 0.0;
    }
    let count = pairs.len() as f64;
    let centroid = pairs.iter().map(|(p, _)| p).sum::<Vector3<f64>>() / count;
    let radius = (pairs.iter().map(|(p, _)| (p - centroid).norm_squared()).sum::<f64>() / count).sqrt();
    if radius == 0.0 {
        return 0.0;
    }
    let mut info = Matrix6::<f64>::zeros();
    for (p, n) in pairs {
        let m = (p - centroid).cross(n) / radius;
        let j = Vector6::new(m.x, m.y, m.z, n.x, n.y, n.z);
        info += j * j.transpose();
    }
    (info / count).symmetric_eigenvalues().min()
}

struct PlaneTarget {
    tree: KdTree,
    normals: Vec<Vector3<f64>>,
}

impl PlaneTarget {
    fn new(points: &PointMap) -> Self {
        let (pts, normals): (Vec<_>, Vec<_>) = pixel_normals(points)
            .into_iter()
            .enumerate()
            .filter_map(|(i, n)| n.map(|n| (points.points()[i], n)))
            .unzip();
        Self { tree: KdTree::new(&pts), normals }
    }

    /// Moved source points paired with target normals, and plane residuals.
    fn pairs(&self, src: &[Vector3<f64>], pose: &SE3Pose, max_distance: f64) -> Vec<(Vector3<f64>, Vector3<f64>, f64)> {
        let max2 = max_distance * max_distance;
        src.iter()
            .filter_map(|p| {
                let q = pose.transform_point(p);
                let (j, d2) = self.tree.nearest(&q)?;
                let n = self.normals[j];
                (d2 <= max2).then(|| (q, n, n.dot(&(q - self.tree.points()[j]))))
            })
            .collect()
    }
}

/// Gauss-Newton point-to-plane refinement of `init`. Returns the refined
/// pose and the pairs at the final estimate.
fn point_to_plane(
    src: &[Vector3<f64>],
    target: &PlaneTarget,
    init: SE3Pose,
    max_distance: f64,
    max_iters: usize,
) -> (SE3Pose, Vec<(Vector3<f64>, Vector3<f64>, f64)>) {
    let mut pose = init;
    for _ in 0..max_iters {
        let pairs = target.pairs(src, &pose, max_distance);
        if pairs.len() < 6 {
            return (pose, pairs);
        }
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for (q, n, r) in &pairs {
            let m = q.cross(n);
            let j = Vector6::new(m.x, m.y, m.z, n.x, n.y, n.z);
            h += j * j.transpose();
            g += j * *r;
        }
        let Some(step) = h.cholesky().map(|c| -c.solve(&g)) else { break };
        pose = se3_exp(&Twist::from_slice(&[step[0], step[1], step[2], step[3], step[4], step[5]])).compose(&pose);
        if step.norm() < 1e-10 {
            break;
        }
    }
    let pairs = target.pairs(src, &pose, max_distance);
    (pose, pairs)
}

fn descriptor_distance(a: &[f64], b: &[f64]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (x, y) in a.iter().zip(b) {
        if x.is_finite() && y.is_finite() {
            sum += (x - y) * (x - y);
            n += 1;
        }
    }
    if n == 0 {
        f64::INFINITY
    } else {
        (sum / n as f64).sqrt()
    }
}

fn verify(query: &KeyframeEntry, candidate: &KeyframeEntry, cfg: &LoopConfig) -> Result<Option<(f64, SE3Pose)>> {
    let src = query.points.subsampled(cfg.stride);
    let target: Vec<_> = candidate.points.valid_points().map(|(_, p)| *p).collect();
    if src.len() < 3 || target.len() < 3 {
        return Ok(None);
    }
    let tree = KdTree::new(&target);
    let coarse = match icp(&src, &tree, &Sim3Transform::identity(), &cfg.icp) {
        Ok(fit) => fit.transform.rigid(),
        Err(Error::Degenerate(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let planes = PlaneTarget::new(&candidate.points);
    if planes.normals.len() < 6 {
        return Ok(None);
    }
    let (relative, pairs) = point_to_plane(&src, &planes, coarse, cfg.radius, 30);
    let pairs: Vec<_> = pairs.into_iter().map(|(q, n, _)| (q, n)).collect();
    if alignment_conditioning(&pairs) < cfg.min_conditioning {
        return Ok(None);
    }
    let moved = CovisibilityIndex::new(&apply(&relative, &query.points), cfg.stride)?;
    let other = CovisibilityIndex::new(&candidate.points, cfg.stride)?;
    Ok(Some((moved.score(&other, cfg.radius), relative)))
}

/// Scores the keyframes of a finalized submap against every earlier keyframe
/// at least `min_submap_gap` submaps away. Returns the single best pair if
/// it clears `tau_loop`.
pub fn detect_loops(
    query: &[KeyframeEntry],
    database: &[KeyframeEntry],
    graph: Option<&PoseGraph>,
    cfg: &LoopConfig,
) -> Result<Vec<LoopCandidate>> {
    let mut best: Option<LoopCandidate> = None;
    for q in query {
        let mut ranked: Vec<(f64, &KeyframeEntry)> = database
            .iter()
            .filter(|d| d.submap + cfg.min_submap_gap <= q.submap || q.submap + cfg.min_submap_gap <= d.submap)
            .map(|d| (descriptor_distance(&q.descriptor, &d.descriptor), d))
            .filter(|(s, _)| s.is_finite())
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.frame.cmp(&b.1.frame)));
        for (_, d) in ranked.into_iter().take(cfg.candidates) {
            let Some((score, relative)) = verify(q, d, cfg)? else { continue };
            if score < cfg.tau_loop || best.as_ref().is_some_and(|b| b.score >= score) {
                continue;
            }
            let delta = d.pose.compose(&relative).compose(&q.pose.inverse());
            if let (Some(g), Some((max_t, max_r))) = (graph, cfg.max_graph_disagreement) {
                if let Some(predicted) = g.relative(d.submap, q.submap) {
                    let (dt, dr) = predicted.distance(&delta);
                    if dt > max_t || dr > max_r {
                        continue;
                    }
                }
            }
            best = Some(LoopCandidate {
                query: q.frame,
                matched: d.frame,
                score,
                relative,
                delta,
                query_submap: q.submap,
                match_submap: d.submap,
            });
        }
    }
    Ok(best.into_iter().collect())
}
