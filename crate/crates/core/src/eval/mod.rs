//! Trajectory and reconstruction metrics.

mod icp;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, SE3Pose, Sim3Transform, Trajectory};
use crate::local_align::umeyama;
use crate::spatial::{nearest_distances, KdTree};

pub use icp::{icp, IcpConfig, IcpResult};

/// Largest timestamp gap accepted when associating imported trajectories.
pub const MAX_TIME_DIFFERENCE: f64 = 0.02;

/// Pairs every estimated pose with the ground-truth pose of the same
/// timestamp, or the nearest one within [`MAX_TIME_DIFFERENCE`].
pub fn associate(est: &Trajectory, gt: &Trajectory) -> Result<Vec<(SE3Pose, SE3Pose)>> {
    let g = gt.entries();
    if g.is_empty() {
        return Err(Error::Empty("ground-truth trajectory is empty".into()));
    }
    est.entries()
        .iter()
        .map(|(t, p)| {
            let k = g.partition_point(|(tg, _)| tg < t);
            let best = [k.checked_sub(1), Some(k)]
                .into_iter()
                .flatten()
                .filter(|&i| i < g.len())
                .min_by(|&a, &b| (g[a].0 - t).abs().total_cmp(&(g[b].0 - t).abs()))
                .expect("non-empty");
            if (g[best].0 - t).abs() > MAX_TIME_DIFFERENCE {
                return Err(Error::InvalidValue(format!("no ground-truth pose near timestamp {t}")));
            }
            Ok((*p, g[best].1))
        })
        .collect()
}

/// Translational RMSE between associated poses, optionally after a Sim(3)
/// Umeyama alignment of the estimated positions onto the ground truth.
pub fn ate_rmse(est: &Trajectory, gt: &Trajectory, align: bool) -> Result<f64> {
    Ok(ate_with_alignment(est, gt, align)?.0)
}

/// Like [`ate_rmse`], also returning the alignment applied to `est`.
pub fn ate_with_alignment(est: &Trajectory, gt: &Trajectory, align: bool) -> Result<(f64, Sim3Transform)> {
    if est.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("{} estimated poses vs {} ground-truth poses", est.len(), gt.len())));
    }
    if est.len() < 2 {
        return Err(Error::Empty(format!("ATE needs at least 2 poses, got {}", est.len())));
    }
    let pairs = associate(est, gt)?;
    let e: Vec<_> = pairs.iter().map(|(a, _)| a.translation).collect();
    let g: Vec<_> = pairs.iter().map(|(_, b)| b.translation).collect();
    let alignment = if align { umeyama(&e, &g, true)? } else { Sim3Transform::identity() };
    Ok((rmse_after(&alignment, &e, &g), alignment))
}

fn rmse_after(t: &Sim3Transform, e: &[Vector3<f64>], g: &[Vector3<f64>]) -> f64 {
    let sum: f64 = e.iter().zip(g).map(|(a, b)| (t.transform_point(a) - b).norm_squared()).sum();
    (sum / e.len() as f64).sqrt()
}

/// Aligns a predicted cloud to the ground truth: Umeyama Sim(3) on matched
/// trajectory positions when given, then point-to-point ICP with the scale
/// held fixed.
pub fn align_clouds(
    pred: &PointCloud,
    gt: &PointCloud,
    positions: Option<(&[Vector3<f64>], &[Vector3<f64>])>,
    cfg: &IcpConfig,
) -> Result<(Sim3Transform, Vec<f64>)> {
    if pred.len() < 3 || gt.len() < 3 {
        return Err(Error::Degenerate("cloud alignment needs at least 3 points per cloud".into()));
    }
    let init = match positions {
        Some((est, truth)) => umeyama(est, truth, true)?,
        None => Sim3Transform::identity(),
    };
    let tree = KdTree::new(&gt.points);
    let result = icp(&pred.points, &tree, &init, cfg)?;
    Ok((result.transform, result.trace))
}

/// Mean and median distance from each predicted point to the ground truth
/// (accuracy) and from each ground-truth point to the prediction
/// (completeness), in that order. `cutoff` drops distances above it.
pub fn accuracy_completeness(pred: &[Vector3<f64>], gt: &[Vector3<f64>], cutoff: Option<f64>) -> Result<(f64, f64, f64, f64)> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::Empty("accuracy/completeness need non-empty clouds".into()));
    }
    let acc = nearest_distances(&KdTree::new(gt), pred);
    let comp = nearest_distances(&KdTree::new(pred), gt);
    let (am, ad) = mean_median(acc, cutoff);
    let (cm, cd) = mean_median(comp, cutoff);
    Ok((am, ad, cm, cd))
}

fn mean_median(mut d: Vec<f64>, cutoff: Option<f64>) -> (f64, f64) {
    if let Some(c) = cutoff {
        d.retain(|v| *v <= c);
    }
    if d.is_empty() {
        return (0.0, 0.0);
    }
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let median = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
    (mean, median)
}

/// Metrics as written to disk, in centimeters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub units: String,
    pub ate_rmse: f64,
    pub acc_mean: Option<f64>,
    pub acc_median: Option<f64>,
    pub comp_mean: Option<f64>,
    pub comp_median: Option<f64>,
    pub alignment: Sim3Transform,
    pub frames: usize,
}

impl EvalReport {
    /// Builds a report from metric values in meters.
    pub fn from_meters(ate: f64, recon: Option<(f64, f64, f64, f64)>, alignment: Sim3Transform, frames: usize) -> Self {
        let cm = |m: f64| m * 100.0;
        Self {
            units: "cm".into(),
            ate_rmse: cm(ate),
            acc_mean: recon.map(|r| cm(r.0)),
            acc_median: recon.map(|r| cm(r.1)),
            comp_mean: recon.map(|r| cm(r.2)),
            comp_median: recon.map(|r| cm(r.3)),
            alignment,
            frames,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Full evaluation of a trajectory and optionally a reconstruction.
pub fn evaluate(
    est: &Trajectory,
    gt: &Trajectory,
    clouds: Option<(&PointCloud, &PointCloud)>,
    cfg: &IcpConfig,
) -> Result<EvalReport> {
    let (ate, alignment) = ate_with_alignment(est, gt, true)?;
    let recon = match clouds {
        Some((pred, truth)) => {
            let pairs = associate(est, gt)?;
            let e: Vec<_> = pairs.iter().map(|(a, _)| a.translation).collect();
            let g: Vec<_> = pairs.iter().map(|(_, b)| b.translation).collect();
            let (t, _) = align_clouds(pred, truth, Some((&e, &g)), cfg)?;
            let moved: Vec<_> = pred.points.iter().map(|p| t.transform_point(p)).collect();
            Some(accuracy_completeness(&moved, &truth.points, None)?)
        }
        None => None,
    };
    Ok(EvalReport::from_meters(ate, recon, alignment, est.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn traj(points: &[[f64; 3]]) -> Trajectory {
        Trajectory::from_entries(
            points.iter().enumerate().map(|(i, p)| (i as f64, SE3Pose::from_translation(Vector3::from(*p)))).collect(),
        )
        .unwrap()
    }

    #[test]
    fn ate_fixtures() {
        let gt = traj(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert_eq!(ate_rmse(&gt, &gt, false).unwrap(), 0.0);
        let shifted = traj(&[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        assert!((ate_rmse(&shifted, &gt, false).unwrap() - 1.0).abs() < 1e-15);
        let est = traj(&[[0.0, 0.0, 0.0], [1.0, 3.0, 0.0], [2.0, 0.0, 4.0]]);
        assert!((ate_rmse(&est, &gt, false).unwrap() - (25.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!(ate_rmse(&traj(&[[0.0; 3]]), &traj(&[[0.0; 3]]), false).is_err());
        assert!(ate_rmse(&est, &traj(&[[0.0; 3], [1.0; 3]]), false).is_err());
    }

    #[test]
    fn aligned_ate_ignores_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<[f64; 3]> = (0..20).map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0))).collect();
        let gt = traj(&pts);
        let s = Sim3Transform::new(2.5, Quaternion::new(0.2, 0.4, -0.1, 0.9), Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let moved: Vec<[f64; 3]> = pts.iter().map(|p| s.transform_point(&Vector3::from(*p)).into()).collect();
        assert!(ate_rmse(&traj(&moved), &gt, true).unwrap() < 1e-9);
    }

    #[test]
    fn association_tolerates_small_offsets() {
        let gt = traj(&[[0.0; 3], [1.0; 3]]);
        let est = Trajectory::from_entries(vec![(0.01, SE3Pose::identity()), (0.995, SE3Pose::identity())]).unwrap();
        assert_eq!(associate(&est, &gt).unwrap()[1].1.translation, Vector3::repeat(1.0));
        let late = Trajectory::from_entries(vec![(0.05, SE3Pose::identity())]).unwrap();
        assert!(associate(&late, &gt).is_err());
    }

    fn brute(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Vec<f64> {
        pred.iter().map(|p| gt.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min).sqrt()).collect()
    }

    #[test]
    fn accuracy_completeness_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cloud = |n| (0..n).map(|_| Vector3::new(rng.random(), rng.random(), rng.random())).collect::<Vec<Vector3<f64>>>();
        let (a, b) = (cloud(200), cloud(200));
        let got = accuracy_completeness(&a, &b, None).unwrap();
        let (am, ad) = mean_median(brute(&a, &b), None);
        let (cm, cd) = mean_median(brute(&b, &a), None);
        assert_eq!(got, (am, ad, cm, cd));
        let swapped = accuracy_completeness(&b, &a, None).unwrap();
        assert_eq!((swapped.2, swapped.3, swapped.0, swapped.1), got);
    }

    #[test]
    fn one_outlier_shifts_accuracy_only() {
        let gt: Vec<_> = (0..9).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let mut pred = gt.clone();
        pred.push(Vector3::new(4.0, 5.0, 0.0));
        let (am, _, cm, cd) = accuracy_completeness(&pred, &gt, None).unwrap();
        assert!((am - 5.0 / 10.0).abs() < 1e-15);
        assert_eq!((cm, cd), (0.0, 0.0));
        assert!(accuracy_completeness(&[], &gt, None).is_err());
    }

    #[test]
    fn icp_recovers_small_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gt: Vec<_> = (0..600)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3)))
            .collect();
        let truth = Sim3Transform::new(1.0, Quaternion::from_rotation_vector(&Vector3::new(0.02, -0.01, 0.03)), Vector3::new(0.02, 0.01, -0.01)).unwrap();
        let pred: Vec<_> = gt.iter().map(|p| truth.inverse().transform_point(p)).collect();
        let (t, trace) = align_clouds(&PointCloud::from_points(pred), &PointCloud::from_points(gt), None, &IcpConfig { max_iters: 200, rel_tol: 0.0, ..Default::default() }).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!((t.translation - truth.translation).norm() < 1e-6, "{:?}", trace.last());
    }

    #[test]
    fn report_is_in_centimeters() {
        let r = EvalReport::from_meters(0.5, Some((0.01, 0.02, 0.03, 0.04)), Sim3Transform::identity(), 3);
        assert_eq!(r.ate_rmse, 50.0);
        assert_eq!(r.comp_median, Some(4.0));
        assert!(r.to_json().contains("\"units\": \"cm\""));
    }
}
