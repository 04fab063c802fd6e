//! Per-frame tracking policy: covisibility scoring, keyframe promotion and
//! submap boundaries with latent-state resets.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointMap, SE3Pose};
use crate::predictor::{FrameInput, FramePrediction, Predictor};
use crate::spatial::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrontendConfig {
    pub tau_kf: f64,
    pub tau_anchor: f64,
    pub tau_loop: f64,
    /// Covisibility radius in meters.
    pub radius: f64,
    /// Query subsampling stride in pixels.
    pub stride: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self { tau_kf: 0.7, tau_anchor: 0.3, tau_loop: 0.5, radius: 0.05, stride: 4 }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(unit(self.tau_kf) && unit(self.tau_anchor) && unit(self.tau_loop)) {
            return Err(Error::InvalidConfig("thresholds must lie in (0, 1)".into()));
        }
        if self.tau_anchor > self.tau_kf {
            return Err(Error::InvalidConfig(format!(
                "tau_anchor {} must not exceed tau_kf {}",
                self.tau_anchor, self.tau_kf
            )));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) || self.stride == 0 {
            return Err(Error::InvalidConfig("radius and stride must be positive".into()));
        }
        Ok(())
    }
}

/// Precomputed search structure over one frame's world points.
#[derive(Debug, Clone)]
pub struct CovisibilityIndex {
    tree: KdTree,
    queries: Vec<Vector3<f64>>,
}

impl CovisibilityIndex {
    pub fn new(points: &PointMap, stride: usize) -> Result<Self> {
        let all: Vec<_> = points.valid_points().map(|(_, p)| *p).collect();
        if all.is_empty() {
            return Err(Error::Empty("frame has no valid world points".into()));
        }
        let mut queries = points.subsampled(stride);
        if queries.is_empty() {
            queries = all.clone();
        }
        Ok(Self { tree: KdTree::new(&all), queries })
    }

    /// Fraction of this frame's queries with a neighbor in `other` within `radius`.
    pub fn overlap_into(&self, other: &CovisibilityIndex, radius: f64) -> f64 {
        let hits = self.queries.iter().filter(|q| other.tree.any_within(q, radius)).count();
        hits as f64 / self.queries.len() as f64
    }

    /// Bidirectional-min overlap.
    pub fn score(&self, other: &CovisibilityIndex, radius: f64) -> f64 {
        self.overlap_into(other, radius).min(other.overlap_into(self, radius))
    }
}

/// Overlap of the world pointmaps of two predictions: the smaller of the two
/// directional fractions of stride-subsampled valid points that have a
/// neighbor in the other frame within `cfg.radius`.
pub fn covisibility(a: &FramePrediction, b: &FramePrediction, cfg: &FrontendConfig) -> Result<f64> {
    pointmap_covisibility(&a.x_world, &b.x_world, cfg)
}

pub fn pointmap_covisibility(a: &PointMap, b: &PointMap, cfg: &FrontendConfig) -> Result<f64> {
    let ia = CovisibilityIndex::new(a, cfg.stride)?;
    let ib = CovisibilityIndex::new(b, cfg.stride)?;
    Ok(ia.score(&ib, cfg.radius))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrontendDecision {
    Ordinary,
    NewKeyframe,
    NewSubmap,
}

/// Two-threshold policy; the anchor test wins.
pub fn decide(cov_kf: f64, cov_anchor: f64, cfg: &FrontendConfig) -> FrontendDecision {
    if cov_anchor < cfg.tau_anchor {
        FrontendDecision::NewSubmap
    } else if cov_kf < cfg.tau_kf {
        FrontendDecision::NewKeyframe
    } else {
        FrontendDecision::Ordinary
    }
}

/// One JSON-lines log entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub frame: usize,
    pub decision: FrontendDecision,
    pub cov_kf: f64,
    pub cov_anchor: f64,
}

pub fn decisions_to_jsonl(records: &[DecisionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: usize,
    pub timestamp: f64,
    /// Camera pose in the frame of its submap, as predicted while tracking.
    pub pose: SE3Pose,
    pub submap: usize,
    pub is_keyframe: bool,
    /// Kept for keyframes only.
    pub prediction: Option<FramePrediction>,
}

/// Pose of a submap's anchor frame as seen from the previous submap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boundary {
    pub frame: usize,
    pub pose_in_previous: SE3Pose,
    pub pose_in_current: SE3Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submap {
    pub id: usize,
    pub anchor: usize,
    pub keyframes: Vec<usize>,
    pub frames: Vec<usize>,
    /// World-from-submap pose.
    pub pose: SE3Pose,
    pub finalized: bool,
    pub boundary: Option<Boundary>,
}

impl Submap {
    fn start(id: usize, anchor: usize, boundary: Option<Boundary>) -> Self {
        Self {
            id,
            anchor,
            keyframes: vec![anchor],
            frames: vec![anchor],
            pose: SE3Pose::identity(),
            finalized: false,
            boundary,
        }
    }
}

/// What the caller learns from one processed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutcome {
    pub decision: FrontendDecision,
    /// Submap that was closed by this frame, if any.
    pub finalized: Option<usize>,
    /// Prediction of this frame in the frame of the submap it joined.
    pub prediction: FramePrediction,
}

/// Sequential tracker owning the recurrent state.
pub struct Frontend<'p, P: Predictor> {
    predictor: &'p P,
    cfg: FrontendConfig,
    state: P::State,
    frames: Vec<Frame>,
    submaps: Vec<Submap>,
    log: Vec<DecisionRecord>,
    keyframe_index: Option<CovisibilityIndex>,
    anchor_index: Option<CovisibilityIndex>,
    resets: usize,
}

impl<'p, P: Predictor> Frontend<'p, P> {
    pub fn new(predictor: &'p P, cfg: FrontendConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            predictor,
            cfg,
            state: predictor.initial_state(),
            frames: Vec::new(),
            submaps: Vec::new(),
            log: Vec::new(),
            keyframe_index: None,
            anchor_index: None,
            resets: 0,
        })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn submaps(&self) -> &[Submap] {
        &self.submaps
    }

    pub fn log(&self) -> &[DecisionRecord] {
        &self.log
    }

    /// Number of latent-state resets performed so far.
    pub fn resets(&self) -> usize {
        self.resets
    }

    pub fn keyframe_predictions(&self) -> BTreeMap<usize, &FramePrediction> {
        self.frames.iter().filter_map(|f| f.prediction.as_ref().map(|p| (f.id, p))).collect()
    }

    pub fn process(&mut self, input: &FrameInput<'_>, timestamp: f64) -> Result<FrameOutcome> {
        if let Some(last) = self.frames.last() {
            if input.index <= last.id {
                return Err(Error::InvalidValue(format!("frame id {} does not follow {}", input.index, last.id)));
            }
        }
        let (state, pred) = self.predictor.step(&self.state, input)?;
        if self.submaps.is_empty() {
            self.start_submap(input, timestamp, state, pred.clone(), None)?;
            return Ok(FrameOutcome { decision: FrontendDecision::NewSubmap, finalized: None, prediction: pred });
        }

        let index = CovisibilityIndex::new(&pred.x_world, self.cfg.stride)?;
        let cov_kf = index.score(self.keyframe_index.as_ref().expect("keyframe exists"), self.cfg.radius);
        let cov_anchor = index.score(self.anchor_index.as_ref().expect("anchor exists"), self.cfg.radius);
        let decision = decide(cov_kf, cov_anchor, &self.cfg);
        self.log.push(DecisionRecord { frame: input.index, decision, cov_kf, cov_anchor });

        match decision {
            FrontendDecision::NewSubmap => {
                let closed = self.submaps.len() - 1;
                self.submaps[closed].finalized = true;
                let old_pose = pred.pose;
                self.resets += 1;
                let (state, pred) = self.predictor.step(&self.predictor.initial_state(), input)?;
                let boundary = Boundary { frame: input.index, pose_in_previous: old_pose, pose_in_current: pred.pose };
                self.start_submap(input, timestamp, state, pred.clone(), Some(boundary))?;
                Ok(FrameOutcome { decision, finalized: Some(closed), prediction: pred })
            }
            FrontendDecision::NewKeyframe => {
                self.state = state;
                let submap = self.submaps.last_mut().expect("submap exists");
                submap.keyframes.push(input.index);
                submap.frames.push(input.index);
                self.keyframe_index = Some(index);
                self.frames.push(Frame {
                    id: input.index,
                    timestamp,
                    pose: pred.pose,
                    submap: submap.id,
                    is_keyframe: true,
                    prediction: Some(pred.clone()),
                });
                Ok(FrameOutcome { decision, finalized: None, prediction: pred })
            }
            FrontendDecision::Ordinary => {
                self.state = state;
                let submap = self.submaps.last_mut().expect("submap exists");
                submap.frames.push(input.index);
                self.frames.push(Frame {
                    id: input.index,
                    timestamp,
                    pose: pred.pose,
                    submap: submap.id,
                    is_keyframe: false,
                    prediction: None,
                });
                Ok(FrameOutcome { decision, finalized: None, prediction: pred })
            }
        }
    }

    fn start_submap(
        &mut self,
        input: &FrameInput<'_>,
        timestamp: f64,
        state: P::State,
        pred: FramePrediction,
        boundary: Option<Boundary>,
    ) -> Result<()> {
        let index = CovisibilityIndex::new(&pred.x_world, self.cfg.stride)?;
        let id = self.submaps.len();
        self.submaps.push(Submap::start(id, input.index, boundary));
        self.state = state;
        self.keyframe_index = Some(index.clone());
        self.anchor_index = Some(index);
        if boundary.is_none() {
            self.log.push(DecisionRecord {
                frame: input.index,
                decision: FrontendDecision::NewSubmap,
                cov_kf: 0.0,
                cov_anchor: 0.0,
            });
        }
        self.frames.push(Frame {
            id: input.index,
            timestamp,
            pose: pred.pose,
            submap: id,
            is_keyframe: true,
            prediction: Some(pred),
        });
        Ok(())
    }

    /// Closes the last submap. Returns its id.
    pub fn finish(&mut self) -> Option<usize> {
        let last = self.submaps.last_mut()?;
        if last.finalized {
            return None;
        }
        last.finalized = true;
        Some(last.id)
    }

    pub fn into_parts(self) -> (Vec<Frame>, Vec<Submap>, Vec<DecisionRecord>) {
        (self.frames, self.submaps, self.log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ConfidenceMap;

    pub(crate) fn prediction(points: Vec<Vector3<f64>>) -> FramePrediction {
        let n = points.len();
        let map = PointMap::from_points(n, 1, points).unwrap();
        let conf = ConfidenceMap::constant(n, 1, 1.0).unwrap();
        FramePrediction { x_self: map.clone(), c_self: conf.clone(), x_world: map, c_world: conf, pose: SE3Pose::identity() }
    }

    fn brute(a: &[Vector3<f64>], b: &[Vector3<f64>], r: f64) -> f64 {
        let f = |a: &[Vector3<f64>], b: &[Vector3<f64>]| {
            a.iter().filter(|p| b.iter().any(|q| (*p - q).norm_squared() <= r * r)).count() as f64 / a.len() as f64
        };
        f(a, b).min(f(b, a))
    }

    #[test]
    fn identical_and_disjoint() {
        let cfg = FrontendConfig { stride: 1, ..Default::default() };
        let pts: Vec<_> = (0..10).map(|i| Vector3::new(i as f64 * 0.1, 0.0, 1.0)).collect();
        let a = prediction(pts.clone());
        assert_eq!(covisibility(&a, &a, &cfg).unwrap(), 1.0);
        let far = prediction(pts.iter().map(|p| p + Vector3::new(0.0, 10.0, 0.0)).collect());
        assert_eq!(covisibility(&a, &far, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn half_overlap_matches_brute_force() {
        let cfg = FrontendConfig { stride: 1, ..Default::default() };
        let a: Vec<_> = (0..20).map(|i| Vector3::new(i as f64 * 0.1, 0.0, 1.0)).collect();
        let b: Vec<_> = (10..30).map(|i| Vector3::new(i as f64 * 0.1 + 0.01, 0.0, 1.0)).collect();
        let s = covisibility(&prediction(a.clone()), &prediction(b.clone()), &cfg).unwrap();
        assert_eq!(s, brute(&a, &b, cfg.radius));
        assert_eq!(s, 0.5);
    }

    #[test]
    fn empty_frame_is_an_error() {
        let empty = PointMap::empty(2, 2);
        let full = PointMap::from_points(1, 1, vec![Vector3::x()]).unwrap();
        assert!(pointmap_covisibility(&empty, &full, &FrontendConfig::default()).is_err());
    }

    #[test]
    fn policy_checks_anchor_first() {
        let cfg = FrontendConfig::default();
        assert_eq!(decide(1.0, 1.0, &cfg), FrontendDecision::Ordinary);
        assert_eq!(decide(0.5, 0.5, &cfg), FrontendDecision::NewKeyframe);
        assert_eq!(decide(0.9, 0.1, &cfg), FrontendDecision::NewSubmap);
        assert_eq!(decide(0.1, 0.1, &cfg), FrontendDecision::NewSubmap);
    }

    #[test]
    fn config_invariants() {
        assert!(FrontendConfig::default().validate().is_ok());
        let bad = FrontendConfig { tau_anchor: 0.8, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(FrontendConfig { tau_kf: 1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn jsonl_format() {
        let r = DecisionRecord { frame: 3, decision: FrontendDecision::NewKeyframe, cov_kf: 0.5, cov_anchor: 0.75 };
        assert_eq!(
            decisions_to_jsonl(&[r]),
            "{\"frame\":3,\"decision\":\"new_keyframe\",\"cov_kf\":0.5,\"cov_anchor\":0.75}\n"
        );
    }
}
