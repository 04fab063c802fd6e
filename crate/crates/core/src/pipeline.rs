//! End-to-end run: frontend, per-submap local alignment, incremental pose
//! graph with loop closure, map assembly and evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{accuracy_completeness, align_clouds, associate, ate_rmse, EvalReport, IcpConfig};
use crate::frontend::{DecisionRecord, Frame, Frontend, FrontendConfig, Submap};
use crate::geometry::{PointCloud, PointMap, SE3Pose, Trajectory};
use crate::local_align::{build_graph, optimize_local, EdgeObservation, LocalConfig, LocalProblem, LocalSolution};
use crate::posegraph::{
    assemble_global_map, detect_loops, incremental_update, sequential_constraint, EdgeKind, Information,
    InformationConfig, KeyframeEntry, LmConfig, LoopCandidate, LoopConfig, PoseEdge, PoseGraph, SubmapResult,
};
use crate::predictor::{FrameInput, FramePrediction, Predictor};
use crate::synth::SyntheticSequence;

/// Ordered frames with timestamps that can be fed to a predictor.
pub trait FrameSource {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn timestamp(&self, frame: usize) -> f64;
    fn with_input<T>(&self, frame: usize, f: &mut dyn FnMut(&FrameInput<'_>) -> Result<T>) -> Result<T>;
}

impl FrameSource for SyntheticSequence {
    fn len(&self) -> usize {
        self.poses.len()
    }

    fn timestamp(&self, frame: usize) -> f64 {
        self.timestamps[frame]
    }

    fn with_input<T>(&self, frame: usize, f: &mut dyn FnMut(&FrameInput<'_>) -> Result<T>) -> Result<T> {
        SyntheticSequence::with_input(self, frame, |input| f(input))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseGraphConfig {
    pub lm: LmConfig,
    pub information: InformationConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub icp: IcpConfig,
    /// Optional outlier cutoff for accuracy/completeness, in meters.
    pub cutoff: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub frontend: FrontendConfig,
    pub local: LocalConfig,
    pub loops: LoopConfig,
    pub posegraph: PoseGraphConfig,
    pub eval: EvalConfig,
    /// Pixel stride used when adding frames to the output map.
    pub map_stride: usize,
    pub detect_loops: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut local = LocalConfig::default();
        local.graph.link_keyframes = true;
        local.rel_tol = 1e-6;
        local.max_iters = 30;
        Self {
            frontend: FrontendConfig::default(),
            local,
            loops: LoopConfig::default(),
            posegraph: PoseGraphConfig::default(),
            eval: EvalConfig::default(),
            map_stride: 4,
            detect_loops: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.frontend.validate()?;
        if self.map_stride == 0 {
            return Err(Error::InvalidConfig("map_stride must be positive".into()));
        }
        if !(self.loops.tau_loop > 0.0 && self.loops.tau_loop < 1.0) {
            return Err(Error::InvalidConfig("tau_loop must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub map: PointCloud,
    /// Sequential chaining of raw frontend poses, without refinement or loops.
    pub open_loop_trajectory: Trajectory,
    /// Raw frontend points placed by sequential chaining.
    pub stitch_map: PointCloud,
    pub graph: PoseGraph,
    pub submaps: Vec<Submap>,
    pub decisions: Vec<DecisionRecord>,
    pub loops: Vec<LoopCandidate>,
    pub local: BTreeMap<usize, LocalSolution>,
    /// Per-frame id of the submap it belongs to.
    pub frame_submaps: Vec<usize>,
}

fn strided_cloud(points: &PointMap, conf: &crate::geometry::ConfidenceMap, pose: &SE3Pose, stride: usize) -> PointCloud {
    let mut cloud = PointCloud::new();
    let (w, h) = (points.width(), points.height());
    for r in (0..h).step_by(stride) {
        for c in (0..w).step_by(stride) {
            let i = r * w + c;
            if points.is_valid(i) {
                cloud.push(pose.transform_point(&points.points()[i]), conf.get(i));
            }
        }
    }
    cloud
}

struct SubmapOutput {
    result: SubmapResult,
    keyframes: Vec<KeyframeEntry>,
    solution: LocalSolution,
}

fn refine_submap<P: Predictor, S: FrameSource>(
    predictor: &P,
    source: &S,
    submap: &Submap,
    frames: &[Frame],
    cfg: &PipelineConfig,
) -> Result<SubmapOutput> {
    let frame_of = |id: usize| frames.iter().find(|f| f.id == id).expect("frame recorded");
    let graph = build_graph(submap, &cfg.local.graph)?;
    let relative = |center: usize, v: usize| -> Result<FramePrediction> {
        source.with_input(center, &mut |c| source.with_input(v, &mut |t| predictor.predict_relative(c, t)))
    };
    let mut observations = Vec::with_capacity(graph.edges.len());
    let mut member_poses: BTreeMap<(usize, usize), SE3Pose> = BTreeMap::new();
    for (e, edge) in graph.edges.iter().enumerate() {
        let mut obs = Vec::with_capacity(edge.members.len());
        for &v in &edge.members {
            let pred = relative(edge.center, v)?;
            member_poses.insert((e, v), pred.pose);
            obs.push(EdgeObservation { frame: v, points: pred.x_world, confidence: pred.c_world });
        }
        observations.push(obs);
    }
    let initial = graph.edges.iter().map(|e| if e.center == submap.anchor { SE3Pose::identity() } else { frame_of(e.center).pose }).collect();
    let problem = LocalProblem { graph: graph.clone(), observations, initial };
    let solution = optimize_local(&problem, &cfg.local)?;

    // Pose and points of each frame from the edge with the nearest center.
    let mut poses = Vec::with_capacity(submap.frames.len());
    let mut cloud = PointCloud::new();
    let mut keyframes = Vec::new();
    for &v in &submap.frames {
        let e = (0..graph.edges.len()).min_by_key(|&e| (graph.edges[e].center.abs_diff(v), graph.edges[e].center)).expect("edges exist");
        let t_e = solution.edge_transforms[e].rigid();
        let (pose, points, conf) = match (member_poses.get(&(e, v)), solution.refined.get(&v)) {
            (Some(p), Some((map, conf))) => (t_e.compose(p), map.clone(), conf.clone()),
            _ => {
                let pred = relative(graph.edges[e].center, v)?;
                let pts = crate::geometry::apply(&t_e, &pred.x_world);
                (t_e.compose(&pred.pose), pts, pred.c_world)
            }
        };
        cloud.extend(&strided_cloud(&points, &conf, &SE3Pose::identity(), cfg.map_stride));
        let frame = frame_of(v);
        if let Some(pred) = frame.prediction.as_ref().filter(|_| frame.is_keyframe) {
            keyframes.push(KeyframeEntry::new(v, submap.id, pose, pred.x_self.clone()));
        }
        poses.push((v, frame.timestamp, pose));
    }
    Ok(SubmapOutput { result: SubmapResult { submap: submap.id, poses, cloud }, keyframes, solution })
}

/// Runs the full pipeline over `source`.
pub fn run<P: Predictor, S: FrameSource>(predictor: &P, source: &S, cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::Empty("no frames to process".into()));
    }
    let mut frontend = Frontend::new(predictor, cfg.frontend)?;
    let prior_info = Information::identity() * cfg.posegraph.information.prior;
    let mut graph = PoseGraph::new(0, SE3Pose::identity(), prior_info)?;
    let mut chain = graph.clone();
    let mut results = Vec::new();
    let mut database: Vec<KeyframeEntry> = Vec::new();
    let mut loops = Vec::new();
    let mut local = BTreeMap::new();
    let mut raw: BTreeMap<usize, (PointCloud, Vec<(f64, SE3Pose)>)> = BTreeMap::new();

    let mut finalize = |id: usize,
                        frontend: &Frontend<'_, P>,
                        graph: &mut PoseGraph,
                        chain: &mut PoseGraph|
     -> Result<()> {
        let submaps = frontend.submaps();
        let out = refine_submap(predictor, source, &submaps[id], frontend.frames(), cfg)?;
        if id > 0 {
            let edge = sequential_constraint(&submaps[id - 1], &submaps[id], &cfg.posegraph.information)?;
            incremental_update(chain, edge.clone(), &cfg.posegraph.lm)?;
            incremental_update(graph, edge, &cfg.posegraph.lm)?;
        }
        if cfg.detect_loops {
            for c in detect_loops(&out.keyframes, &database, Some(graph), &cfg.loops)? {
                let edge = PoseEdge {
                    u: c.match_submap,
                    v: c.query_submap,
                    delta: c.delta,
                    information: Information::identity() * cfg.posegraph.information.loop_closure,
                    kind: EdgeKind::Loop,
                };
                incremental_update(graph, edge, &cfg.posegraph.lm)?;
                loops.push(c);
            }
        }
        database.extend(out.keyframes);
        local.insert(id, out.solution);
        results.push(out.result);
        Ok(())
    };

    for i in 0..source.len() {
        let ts = source.timestamp(i);
        let outcome = source.with_input(i, &mut |input| frontend.process(input, ts))?;
        let sub = frontend.submaps().len() - 1;
        let entry = raw.entry(sub).or_default();
        entry.0.extend(&strided_cloud(&outcome.prediction.x_world, &outcome.prediction.c_world, &SE3Pose::identity(), cfg.map_stride));
        entry.1.push((ts, outcome.prediction.pose));
        if let Some(closed) = outcome.finalized {
            finalize(closed, &frontend, &mut graph, &mut chain)?;
        }
    }
    if let Some(last) = frontend.finish() {
        finalize(last, &frontend, &mut graph, &mut chain)?;
    }

    let (map, trajectory) = assemble_global_map(&results, &graph)?;
    let mut stitch_map = PointCloud::new();
    let mut open_loop = Vec::new();
    for (id, (cloud, poses)) in &raw {
        let t = chain.nodes[id];
        for (p, c) in cloud.points.iter().zip(&cloud.confidence) {
            stitch_map.push(t.transform_point(p), *c);
        }
        open_loop.extend(poses.iter().map(|(ts, p)| (*ts, t.compose(p))));
    }
    let frame_submaps = frontend.frames().iter().map(|f| f.submap).collect();
    let (_, submaps, decisions) = frontend.into_parts();
    Ok(RunOutput {
        trajectory,
        map,
        open_loop_trajectory: Trajectory::from_entries(open_loop)?,
        stitch_map,
        graph,
        submaps,
        decisions,
        loops,
        local,
        frame_submaps,
    })
}

/// Metrics written after a run, in centimeters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub report: EvalReport,
    pub open_loop_ate: f64,
    pub stitch_acc_mean: Option<f64>,
    pub stitch_comp_mean: Option<f64>,
    pub submaps: usize,
    pub loops: usize,
}

/// Aligned accuracy/completeness of a map against ground truth, using the
/// evaluation protocol (trajectory Umeyama, then ICP).
pub fn reconstruction_metrics(
    map: &PointCloud,
    est: &Trajectory,
    gt_cloud: &PointCloud,
    gt: &Trajectory,
    cfg: &EvalConfig,
) -> Result<(f64, f64, f64, f64)> {
    let pairs = associate(est, gt)?;
    let e: Vec<_> = pairs.iter().map(|(a, _)| a.translation).collect();
    let g: Vec<_> = pairs.iter().map(|(_, b)| b.translation).collect();
    let (t, _) = align_clouds(map, gt_cloud, Some((&e, &g)), &cfg.icp)?;
    let moved: Vec<_> = map.points.iter().map(|p| t.transform_point(p)).collect();
    accuracy_completeness(&moved, &gt_cloud.points, cfg.cutoff)
}

pub fn evaluate_run(out: &RunOutput, gt: &Trajectory, gt_cloud: Option<&PointCloud>, cfg: &EvalConfig) -> Result<RunMetrics> {
    let (ate, alignment) = crate::eval::ate_with_alignment(&out.trajectory, gt, true)?;
    let open = ate_rmse(&out.open_loop_trajectory, gt, true)?;
    let (recon, stitch) = match gt_cloud {
        Some(c) => (
            Some(reconstruction_metrics(&out.map, &out.trajectory, c, gt, cfg)?),
            Some(reconstruction_metrics(&out.stitch_map, &out.open_loop_trajectory, c, gt, cfg)?),
        ),
        None => (None, None),
    };
    Ok(RunMetrics {
        report: EvalReport::from_meters(ate, recon, alignment, out.trajectory.len()),
        open_loop_ate: open * 100.0,
        stitch_acc_mean: stitch.map(|s| s.0 * 100.0),
        stitch_comp_mean: stitch.map(|s| s.2 * 100.0),
        submaps: out.submaps.len(),
        loops: out.loops.len(),
    })
}
