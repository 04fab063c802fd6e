use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Sim3Transform;
use crate::local_align::umeyama;
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpConfig {
    pub max_iters: usize,
    /// Stop when the association RMSE changes by less than this fraction.
    pub rel_tol: f64,
    /// Source points beyond this count are subsampled with a uniform stride.
    pub max_points: usize,
    /// Pairs farther apart than this are dropped from the rigid fit.
    pub max_distance: Option<f64>,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self { max_iters: 50, rel_tol: 1e-6, max_points: 20_000, max_distance: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub transform: Sim3Transform,
    /// Association RMSE at the start of every iteration.
    pub trace: Vec<f64>,
    /// Fraction of source points paired within `max_distance` at the end.
    pub inlier_fraction: f64,
}

/// Point-to-point ICP from `src` onto the points of `target`, starting at
/// `init`. Only the rigid part is updated; the scale of `init` is kept.
pub fn icp(src: &[Vector3<f64>], target: &KdTree, init: &Sim3Transform, cfg: &IcpConfig) -> Result<IcpResult> {
    if src.is_empty() || target.is_empty() {
        return Err(Error::Empty("icp needs non-empty clouds".into()));
    }
    let stride = src.len().div_ceil(cfg.max_points.max(1));
    let src: Vec<_> = src.iter().step_by(stride).copied().collect();
    let cutoff2 = cfg.max_distance.map(|d| d * d).unwrap_or(f64::INFINITY);
    let mut transform = *init;
    let mut trace = Vec::new();
    let mut inliers = src.len();
    for _ in 0..cfg.max_iters.max(1) {
        let moved: Vec<_> = src.iter().map(|p| transform.transform_point(p)).collect();
        let (mut from, mut to) = (Vec::with_capacity(moved.len()), Vec::with_capacity(moved.len()));
        let mut sum = 0.0;
        for p in &moved {
            let (j, d2) = target.nearest(p).expect("non-empty target");
            if d2 <= cutoff2 {
                from.push(*p);
                to.push(target.points()[j]);
                sum += d2;
            }
        }
        inliers = from.len();
        let rmse = if inliers > 0 { (sum / inliers as f64).sqrt() } else { f64::INFINITY };
        let stop = trace.last().is_some_and(|prev: &f64| (prev - rmse).abs() <= cfg.rel_tol * prev.max(f64::MIN_POSITIVE));
        trace.push(rmse);
        if stop || rmse == 0.0 {
            break;
        }
        let delta = match umeyama(&from, &to, false) {
            Ok(d) => d,
            Err(Error::Degenerate(_)) if trace.len() > 1 => break,
            Err(e) => return Err(e),
        };
        transform = delta.compose(&transform);
    }
    Ok(IcpResult { transform, trace, inlier_fraction: inliers as f64 / src.len() as f64 })
}
