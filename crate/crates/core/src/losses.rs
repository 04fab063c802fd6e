//! Training objectives as pure functions with analytic gradients.
//!
//! - Confidence-weighted pointmap regression:
//!   `sum_i c_i |x_hat_i / s_hat - x_i / s| - beta log c_i`.
//! - Pose loss: `sum_t |q_hat_t - q_t| + |tau_hat_t / s_hat - tau_t / s|`.
//!
//! Normalization factors are mean Euclidean norms of the valid points. With
//! `metric_scale` the prediction reuses the ground-truth factor.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConfidenceMap, PointMap, Quaternion, SE3Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub beta: f64,
    pub metric_scale: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { beta: 0.2, metric_scale: true }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::InvalidConfig(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Ground-truth and predicted normalization factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub gt: f64,
    pub pred: f64,
}

impl Normalization {
    pub fn unit() -> Self {
        Self { gt: 1.0, pred: 1.0 }
    }

    /// Sequence-global factors: mean norm over the valid ground-truth
    /// pixels of every frame, and over the corresponding predictions.
    pub fn from_sequence(preds: &[&PointMap], gts: &[&PointMap], cfg: &LossConfig) -> Result<Self> {
        if preds.len() != gts.len() {
            return Err(Error::ShapeMismatch(format!("{} predictions for {} ground truths", preds.len(), gts.len())));
        }
        let (mut sum_gt, mut sum_pred, mut n) = (0.0, 0.0, 0usize);
        for (p, g) in preds.iter().zip(gts) {
            check_shapes(p, g)?;
            for (i, x) in g.valid_points() {
                sum_gt += x.norm();
                sum_pred += p.points()[i].norm();
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::Empty("no valid ground-truth pixels".into()));
        }
        let gt = sum_gt / n as f64;
        let pred = if cfg.metric_scale { gt } else { sum_pred / n as f64 };
        Ok(Self { gt, pred })
    }
}

fn check_shapes(pred: &PointMap, gt: &PointMap) -> Result<()> {
    if !pred.same_shape(gt) {
        return Err(Error::ShapeMismatch(format!("prediction {:?} vs ground truth {:?}", pred.shape(), gt.shape())));
    }
    Ok(())
}

struct RegressionTerms {
    indices: Vec<usize>,
    s_gt: f64,
    s_pred: f64,
}

fn regression_terms(pred: &PointMap, conf: &ConfidenceMap, gt: &PointMap, cfg: &LossConfig) -> Result<RegressionTerms> {
    cfg.validate()?;
    check_shapes(pred, gt)?;
    if !conf.matches(gt) {
        return Err(Error::ShapeMismatch("confidence map shape differs from point map".into()));
    }
    let indices: Vec<usize> = gt.valid_points().map(|(i, _)| i).collect();
    if indices.is_empty() {
        return Err(Error::Empty("ground-truth validity mask is empty".into()));
    }
    let m = indices.len() as f64;
    let s_gt = indices.iter().map(|&i| gt.points()[i].norm()).sum::<f64>() / m;
    let s_pred = if cfg.metric_scale {
        s_gt
    } else {
        indices.iter().map(|&i| pred.points()[i].norm()).sum::<f64>() / m
    };
    if !(s_gt > 0.0) || !(s_pred > 0.0) {
        return Err(Error::Degenerate("normalization factor is zero".into()));
    }
    Ok(RegressionTerms { indices, s_gt, s_pred })
}

/// Confidence-weighted regression loss over the valid ground-truth pixels.
pub fn regression_loss(pred: &PointMap, conf: &ConfidenceMap, gt: &PointMap, cfg: &LossConfig) -> Result<f64> {
    let t = regression_terms(pred, conf, gt, cfg)?;
    let mut loss = 0.0;
    for &i in &t.indices {
        let r = pred.points()[i] / t.s_pred - gt.points()[i] / t.s_gt;
        let c = conf.get(i);
        loss += c * r.norm() - cfg.beta * c.ln();
    }
    Ok(loss)
}

/// Gradient of [`regression_loss`] with respect to every predicted point and
/// confidence. Invalid pixels receive zero; pixels with zero residual use the
/// zero subgradient.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionGradient {
    pub points: Vec<Vector3<f64>>,
    pub confidence: Vec<f64>,
}

pub fn regression_loss_gradient(
    pred: &PointMap,
    conf: &ConfidenceMap,
    gt: &PointMap,
    cfg: &LossConfig,
) -> Result<RegressionGradient> {
    let t = regression_terms(pred, conf, gt, cfg)?;
    let n = pred.len();
    let mut points = vec![Vector3::zeros(); n];
    let mut confidence = vec![0.0; n];
    // Accumulates sum_i c_i u_i . (-x_hat_i / s_hat^2), the sensitivity to s_hat.
    let mut ds_hat = 0.0;
    for &i in &t.indices {
        let x_hat = pred.points()[i];
        let r = x_hat / t.s_pred - gt.points()[i] / t.s_gt;
        let d = r.norm();
        let c = conf.get(i);
        confidence[i] = d - cfg.beta / c;
        if d > 0.0 {
            let u = r / d;
            points[i] = c * u / t.s_pred;
            ds_hat += c * u.dot(&(-x_hat / (t.s_pred * t.s_pred)));
        }
    }
    if !cfg.metric_scale {
        let m = t.indices.len() as f64;
        for &i in &t.indices {
            let x_hat = pred.points()[i];
            let norm = x_hat.norm();
            if norm > 0.0 {
                points[i] += ds_hat * x_hat / (m * norm);
            }
        }
    }
    Ok(RegressionGradient { points, confidence })
}

/// Quaternion of `pred` flipped onto the hemisphere of `reference`.
fn aligned(pred: &Quaternion, reference: &Quaternion) -> (Quaternion, f64) {
    if pred.dot(reference) < 0.0 {
        (-*pred, -1.0)
    } else {
        (*pred, 1.0)
    }
}

/// Pose loss with hemisphere-aligned quaternions.
pub fn pose_loss(pred: &[SE3Pose], gt: &[SE3Pose], scales: &Normalization) -> Result<f64> {
    check_pose_lists(pred, gt, scales)?;
    let mut loss = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let (q, _) = aligned(&p.rotation, &g.rotation);
        let dq = Quaternion::from_raw(q.w - g.rotation.w, q.x - g.rotation.x, q.y - g.rotation.y, q.z - g.rotation.z);
        loss += dq.norm() + (p.translation / scales.pred - g.translation / scales.gt).norm();
    }
    Ok(loss)
}

fn check_pose_lists(pred: &[SE3Pose], gt: &[SE3Pose], scales: &Normalization) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("{} predicted poses for {} ground truths", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::Empty("pose lists are empty".into()));
    }
    if !(scales.gt > 0.0 && scales.pred > 0.0) {
        return Err(Error::InvalidValue("normalization factors must be positive".into()));
    }
    Ok(())
}

/// Per-pose gradient of [`pose_loss`]: with respect to the raw predicted
/// quaternion components `(w, x, y, z)` and the predicted translation.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseGradient {
    pub rotation: [f64; 4],
    pub translation: Vector3<f64>,
}

pub fn pose_loss_gradient(pred: &[SE3Pose], gt: &[SE3Pose], scales: &Normalization) -> Result<Vec<PoseGradient>> {
    check_pose_lists(pred, gt, scales)?;
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let (q, sign) = aligned(&p.rotation, &g.rotation);
            let dq = [q.w - g.rotation.w, q.x - g.rotation.x, q.y - g.rotation.y, q.z - g.rotation.z];
            let n = dq.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rotation = if n > 0.0 { dq.map(|v| sign * v / n) } else { [0.0; 4] };
            let r = p.translation / scales.pred - g.translation / scales.gt;
            let d = r.norm();
            let translation = if d > 0.0 { r / (d * scales.pred) } else { Vector3::zeros() };
            PoseGradient { rotation, translation }
        })
        .collect())
}

/// Central-difference gradient of `f` at `x`.
pub fn numerical_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], eps: f64) -> Vec<f64> {
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let plus = f(&probe);
            probe[i] = orig - eps;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// Training curriculum stage, expressed as a mask over parameter names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainingStage {
    /// Short sequences; only the reset and update gates learn.
    Gates,
    /// Short sequences; decoder and gates learn, encoder frozen.
    DecoderAndGates,
    /// Long sequences; decoder, gates and heads learn.
    FineTune,
}

impl TrainingStage {
    pub fn sequence_length(&self) -> usize {
        match self {
            TrainingStage::Gates | TrainingStage::DecoderAndGates => 4,
            TrainingStage::FineTune => 64,
        }
    }

    /// Whether the named predictor parameter is updated in this stage.
    pub fn is_trainable(&self, name: &str) -> bool {
        let gate = name.starts_with("reset_gate.") || name.starts_with("update_gate.");
        let decoder = name.starts_with("decoder.") || name.starts_with("state.");
        let head = name.starts_with("heads.");
        match self {
            TrainingStage::Gates => gate,
            TrainingStage::DecoderAndGates => gate || decoder,
            TrainingStage::FineTune => gate || decoder || head,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    fn single(p: Vector3<f64>) -> PointMap {
        PointMap::from_points(1, 1, vec![p]).unwrap()
    }

    #[test]
    fn perfect_prediction_with_unit_confidence_is_zero() {
        let gt = PointMap::from_points(2, 1, vec![Vector3::new(1.0, 2.0, 3.0), Vector3::new(-1.0, 0.5, 2.0)]).unwrap();
        let conf = ConfidenceMap::constant(2, 1, 1.0).unwrap();
        for metric in [true, false] {
            let cfg = LossConfig { beta: 0.2, metric_scale: metric };
            assert_eq!(regression_loss(&gt, &conf, &gt, &cfg).unwrap(), 0.0);
        }
    }

    #[test]
    fn confidence_e_gives_minus_beta() {
        let gt = single(Vector3::new(1.0, 0.0, 0.0));
        let conf = ConfidenceMap::constant(1, 1, E).unwrap();
        let cfg = LossConfig { beta: 0.2, metric_scale: true };
        let l = regression_loss(&gt, &conf, &gt, &cfg).unwrap();
        assert!((l + 0.2).abs() < 1e-15);
    }

    #[test]
    fn four_point_fixture_matches_hand_sum() {
        let gt_pts = [
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 2.0, 0.0),
            Vector3::new(0.0, 0.0, 3.0),
            Vector3::new(0.0, 0.0, 0.0),
        ];
        let pred_pts = [
            Vector3::new(2.0, 0.0, 0.0),
            Vector3::new(0.0, 4.0, 0.0),
            Vector3::new(0.0, 0.0, 5.0),
            Vector3::new(7.0, 7.0, 7.0),
        ];
        // The fourth pixel is masked out of the ground truth.
        let gt = PointMap::new(2, 2, gt_pts.to_vec(), vec![true, true, true, false]).unwrap();
        let pred = PointMap::from_points(2, 2, pred_pts.to_vec()).unwrap();
        let conf = ConfidenceMap::new(2, 2, vec![1.0, 2.0, 0.5, 9.0]).unwrap();
        let beta = 0.2;
        // s = (1 + 2 + 3) / 3 = 2, s_hat = (2 + 4 + 5) / 3 = 11 / 3.
        let s: f64 = 2.0;
        let sh: f64 = 11.0 / 3.0;
        let t0 = 1.0 * (2.0 / sh - 1.0 / s).abs() - beta * 1.0f64.ln();
        let t1 = 2.0 * (4.0 / sh - 2.0 / s).abs() - beta * 2.0f64.ln();
        let t2 = 0.5 * (5.0 / sh - 3.0 / s).abs() - beta * 0.5f64.ln();
        let cfg = LossConfig { beta, metric_scale: false };
        let l = regression_loss(&pred, &conf, &gt, &cfg).unwrap();
        assert!((l - (t0 + t1 + t2)).abs() < 1e-14);

        let m0 = 1.0 * (2.0 - 1.0) / s;
        let m1 = 2.0 * (4.0 - 2.0) / s - beta * 2.0f64.ln();
        let m2 = 0.5 * (5.0 - 3.0) / s - beta * 0.5f64.ln();
        let cfg = LossConfig { beta, metric_scale: true };
        let l = regression_loss(&pred, &conf, &gt, &cfg).unwrap();
        assert!((l - (m0 + m1 + m2)).abs() < 1e-14);
    }

    #[test]
    fn regression_errors() {
        let gt = PointMap::new(1, 1, vec![Vector3::x()], vec![false]).unwrap();
        let conf = ConfidenceMap::constant(1, 1, 1.0).unwrap();
        assert!(matches!(regression_loss(&gt, &conf, &gt, &LossConfig::default()), Err(Error::Empty(_))));
        let bad = LossConfig { beta: 0.0, metric_scale: true };
        let gt = single(Vector3::x());
        assert!(regression_loss(&gt, &conf, &gt, &bad).is_err());
    }

    #[test]
    fn pose_loss_examples() {
        let a = SE3Pose::new(Quaternion::new(0.9, 0.1, 0.2, 0.3), Vector3::new(1.0, 1.0, 1.0));
        let unit = Normalization::unit();
        assert_eq!(pose_loss(&[a], &[a], &unit).unwrap(), 0.0);
        let b = SE3Pose { rotation: a.rotation, translation: a.translation + Vector3::new(3.0, 4.0, 0.0) };
        assert!((pose_loss(&[b], &[a], &unit).unwrap() - 5.0).abs() < 1e-15);
        let flipped = SE3Pose { rotation: -a.rotation, translation: a.translation };
        assert_eq!(pose_loss(&[flipped], &[a], &unit).unwrap(), 0.0);
        assert!(pose_loss(&[a, a], &[a], &unit).is_err());
    }

    #[test]
    fn numerical_gradient_of_quadratic() {
        let g = numerical_gradient(|x| x.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-5);
        assert!((g[0] - 2.0).abs() < 1e-6 && (g[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn regression_gradient_one_coordinate_two_points() {
        let gt = PointMap::from_points(2, 1, vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 1.0)]).unwrap();
        let pred_pts = vec![Vector3::new(1.3, 0.2, -0.1), Vector3::new(0.1, 0.8, 1.4)];
        let conf = ConfidenceMap::new(2, 1, vec![1.5, 2.5]).unwrap();
        let cfg = LossConfig { beta: 0.2, metric_scale: true };
        let pred = PointMap::from_points(2, 1, pred_pts.clone()).unwrap();
        // Analytic derivative of c |x_hat / s - x / s| in x_hat.x: c (r.x / |r|) / s.
        let s = (1.0 + 2f64.sqrt()) / 2.0;
        let r = (pred_pts[0] - gt.points()[0]) / s;
        let expected = 1.5 * r.x / r.norm() / s;
        let g = regression_loss_gradient(&pred, &conf, &gt, &cfg).unwrap();
        assert!((g.points[0].x - expected).abs() < 1e-14);
        let f = |x: &[f64]| {
            let mut p = pred_pts.clone();
            p[0].x = x[0];
            regression_loss(&PointMap::from_points(2, 1, p).unwrap(), &conf, &gt, &cfg).unwrap()
        };
        let n = numerical_gradient(f, &[pred_pts[0].x], 1e-6);
        assert!((n[0] - expected).abs() < 1e-8);
    }

    #[test]
    fn rotation_invariance_under_metric_scale() {
        let gt_pts = vec![Vector3::new(1.0, 0.2, 3.0), Vector3::new(-0.5, 1.0, 2.0), Vector3::new(0.3, -0.7, 4.0)];
        let pred_pts = vec![Vector3::new(1.1, 0.1, 2.9), Vector3::new(-0.4, 1.2, 2.2), Vector3::new(0.2, -0.6, 3.7)];
        let conf = ConfidenceMap::new(3, 1, vec![1.2, 3.0, 0.7]).unwrap();
        let cfg = LossConfig { beta: 0.2, metric_scale: true };
        let base = regression_loss(
            &PointMap::from_points(3, 1, pred_pts.clone()).unwrap(),
            &conf,
            &PointMap::from_points(3, 1, gt_pts.clone()).unwrap(),
            &cfg,
        )
        .unwrap();
        let q = Quaternion::new(0.7, 0.3, -0.5, 0.2);
        let rot = |v: &Vec<Vector3<f64>>| v.iter().map(|p| q.rotate(p)).collect::<Vec<_>>();
        let moved = regression_loss(
            &PointMap::from_points(3, 1, rot(&pred_pts)).unwrap(),
            &conf,
            &PointMap::from_points(3, 1, rot(&gt_pts)).unwrap(),
            &cfg,
        )
        .unwrap();
        assert!((base - moved).abs() < 1e-12);
    }

    #[test]
    fn confidence_derivative_sign() {
        let gt = single(Vector3::new(1.0, 0.0, 0.0));
        let pred = single(Vector3::new(1.5, 0.0, 0.0));
        let cfg = LossConfig { beta: 0.2, metric_scale: true };
        // Normalized residual is 0.5; derivative d - beta / c is positive iff c > 0.4.
        for (c, positive) in [(0.3, false), (0.5, true), (4.0, true)] {
            let conf = ConfidenceMap::constant(1, 1, c).unwrap();
            let g = regression_loss_gradient(&pred, &conf, &gt, &cfg).unwrap();
            assert_eq!(g.confidence[0] > 0.0, positive, "c = {c}");
        }
    }

    #[test]
    fn curriculum_masks() {
        assert!(TrainingStage::Gates.is_trainable("reset_gate.mlp.out.weight"));
        assert!(!TrainingStage::Gates.is_trainable("decoder.0.memory_ffn.out.bias"));
        assert!(TrainingStage::DecoderAndGates.is_trainable("decoder.1.frame_norm.gain"));
        assert!(!TrainingStage::DecoderAndGates.is_trainable("heads.pose.out.weight"));
        assert!(TrainingStage::FineTune.is_trainable("heads.pose.out.weight"));
        for stage in [TrainingStage::Gates, TrainingStage::DecoderAndGates, TrainingStage::FineTune] {
            assert!(!stage.is_trainable("encoder.projection.weight"));
        }
        assert_eq!(TrainingStage::FineTune.sequence_length(), 64);
    }
}
