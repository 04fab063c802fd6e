//! WebAssembly bindings for the demo page in `www/`. Every entry point takes
//! plain numbers and returns a JSON string; the page does all drawing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use slam_core::eval::ate_with_alignment;
use slam_core::geometry::{se3_exp, Quaternion, SE3Pose, Trajectory, Twist};
use slam_core::pipeline::{run, PipelineConfig};
use slam_core::posegraph::{optimize, EdgeKind, Information, LmConfig, PoseEdge, PoseGraph};
use slam_core::predictor::{ModelConfig, Predictor, ToyPredictor};
use slam_core::synth::{generate, two_room_loop, single_room, NoiseSpec, OraclePredictor};
use wasm_bindgen::prelude::*;

type Xy = [f64; 2];

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("value serializes")
}

fn error_json(e: impl std::fmt::Display) -> String {
    to_json(&serde_json::json!({ "error": e.to_string() }))
}

fn xy(p: &SE3Pose) -> Xy {
    [p.translation.x, p.translation.y]
}

fn circle_pose(i: usize, n: usize, radius: f64) -> SE3Pose {
    let a = std::f64::consts::TAU * i as f64 / n as f64;
    let rotation = Quaternion::from_rotation_vector(&[0.0, 0.0, a + std::f64::consts::FRAC_PI_2].into());
    SE3Pose::new(rotation, [radius * a.cos(), radius * a.sin(), 0.0].into())
}

#[derive(Serialize)]
pub struct PoseGraphDemo {
    pub truth: Vec<Xy>,
    pub before: Vec<Xy>,
    pub after: Vec<Xy>,
    pub ate_before: f64,
    pub ate_after: f64,
    pub cost_trace: Vec<f64>,
}

fn node_ate(graph: &PoseGraph, truth: &[SE3Pose]) -> f64 {
    let sum: f64 = truth.iter().enumerate().map(|(i, t)| (graph.nodes[&i].translation - t.translation).norm_squared()).sum();
    (sum / truth.len() as f64).sqrt()
}

/// Odometry around a circle with a heading bias per edge plus white noise,
/// closed by one loop edge from the last node back to the first.
pub fn pose_graph_demo(nodes: usize, heading_bias: f64, white: f64, loop_weight: f64, seed: u64) -> Result<PoseGraphDemo, String> {
    if nodes < 3 {
        return Err("need at least 3 nodes".into());
    }
    let truth: Vec<_> = (0..nodes).map(|i| circle_pose(i, nodes, 2.0)).collect();
    let info = |w: f64| Information::identity() * w;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graph = PoseGraph::new(0, truth[0], info(1e6)).map_err(|e| e.to_string())?;
    let mut pose = truth[0];
    for i in 0..nodes - 1 {
        let exact = truth[i].inverse().compose(&truth[i + 1]);
        let mut noise: [f64; 6] = std::array::from_fn(|_| { let z: f64 = StandardNormal.sample(&mut rng); white * z });
        noise[2] += heading_bias;
        let delta = exact.compose(&se3_exp(&Twist::from_slice(&noise)));
        pose = pose.compose(&delta);
        graph.add_node(i + 1, pose);
        graph
            .add_edge(PoseEdge { u: i, v: i + 1, delta, information: info(1.0), kind: EdgeKind::Sequential })
            .map_err(|e| e.to_string())?;
    }
    let closure = truth[0].inverse().compose(&truth[nodes - 1]);
    graph
        .add_edge(PoseEdge { u: 0, v: nodes - 1, delta: closure, information: info(loop_weight), kind: EdgeKind::Loop })
        .map_err(|e| e.to_string())?;
    let before: Vec<_> = graph.nodes.values().map(xy).collect();
    let ate_before = node_ate(&graph, &truth);
    let report = optimize(&mut graph, &LmConfig::default()).map_err(|e| e.to_string())?;
    Ok(PoseGraphDemo {
        truth: truth.iter().map(xy).collect(),
        before,
        after: graph.nodes.values().map(xy).collect(),
        ate_before,
        ate_after: node_ate(&graph, &truth),
        cost_trace: report.trace,
    })
}

#[derive(Serialize)]
pub struct PipelineDemo {
    pub frames: usize,
    pub submaps: usize,
    pub truth: Vec<Xy>,
    pub open_loop: Vec<Xy>,
    pub estimate: Vec<Xy>,
    /// Frame pairs joined by accepted loop closures.
    pub loops: Vec<[usize; 2]>,
    /// First frame of every submap.
    pub boundaries: Vec<usize>,
    pub ate_cm: f64,
    pub open_loop_ate_cm: f64,
}

fn aligned_xy(est: &Trajectory, gt: &Trajectory) -> Result<(Vec<Xy>, f64), String> {
    let (ate, t) = ate_with_alignment(est, gt, true).map_err(|e| e.to_string())?;
    let pts = est
        .poses()
        .map(|p| {
            let q = t.transform_point(&p.translation);
            [q.x, q.y]
        })
        .collect();
    Ok((pts, ate * 100.0))
}

/// Oracle run over the two-room loop with per-frame drift (degrees and
/// millimeters) and point noise (millimeters).
pub fn pipeline_demo(frames: usize, drift_deg: f64, drift_mm: f64, sigma_mm: f64, seed: u64) -> Result<PipelineDemo, String> {
    let seq = generate(&two_room_loop(seed, frames.clamp(60, 600))).map_err(|e| e.to_string())?;
    let noise = NoiseSpec {
        point_sigma: sigma_mm * 1e-3,
        drift_rot: drift_deg.to_radians(),
        drift_trans: drift_mm * 1e-3,
        ..Default::default()
    };
    let oracle = OraclePredictor::new(&seq, noise).map_err(|e| e.to_string())?;
    let out = run(&oracle, &seq, &PipelineConfig::default()).map_err(|e| e.to_string())?;
    let gt = seq.trajectory();
    let (estimate, ate_cm) = aligned_xy(&out.trajectory, &gt)?;
    let (open_loop, open_loop_ate_cm) = aligned_xy(&out.open_loop_trajectory, &gt)?;
    Ok(PipelineDemo {
        frames: seq.len(),
        submaps: out.submaps.len(),
        truth: gt.poses().map(xy).collect(),
        open_loop,
        estimate,
        loops: out.loops.iter().map(|l| [l.matched, l.query]).collect(),
        boundaries: out.submaps.iter().map(|s| s.anchor).collect(),
        ate_cm,
        open_loop_ate_cm,
    })
}

#[derive(Serialize)]
pub struct GateDemo {
    pub rows: usize,
    pub cols: usize,
    /// Row-major gate values, one row per memory token.
    pub reset: Vec<f64>,
    pub update: Vec<f64>,
    pub range: [f64; 2],
    /// Relative change of the memory after one step with these gates.
    pub memory_change: f64,
}

/// Reset and update gates of a seeded toy model on one synthetic frame,
/// with the memory tokens scaled by `memory_scale`.
pub fn gate_explorer(memory_scale: f64, frame: usize, seed: u64) -> Result<GateDemo, String> {
    let mut spec = single_room(seed, 24);
    spec.width = 32;
    spec.height = 24;
    let seq = generate(&spec).map_err(|e| e.to_string())?;
    let model = ToyPredictor::new(ModelConfig { width: 32, height: 24, seed, ..Default::default() }).map_err(|e| e.to_string())?;
    let frame = frame.min(seq.len() - 1);
    let image = seq.render_image(frame).map_err(|e| e.to_string())?;
    let tokens = model.encode(&image).map_err(|e| e.to_string())?;
    let mut memory = model.reset();
    memory.tokens *= memory_scale;
    let reset = model.reset_gate(&memory, &tokens);
    let update = model.update_gate(&memory, &tokens);
    let (rows, cols) = reset.0.shape();
    let row_major = |m: &slam_core::predictor::GateValues| {
        let mut v = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                v.push(m.0[(r, c)]);
            }
        }
        v
    };
    let (reset, update) = (row_major(&reset), row_major(&update));
    let lo = reset.iter().chain(&update).copied().fold(f64::INFINITY, f64::min);
    let hi = reset.iter().chain(&update).copied().fold(f64::NEG_INFINITY, f64::max);

    let input = slam_core::predictor::FrameInput { index: frame, image: &image };
    let before = model.reset();
    let (after, _) = model.step(&before, &input).map_err(|e| e.to_string())?;
    let memory_change = (&after.tokens - &before.tokens).norm() / before.tokens.norm();
    Ok(GateDemo { rows, cols, reset, update, range: [lo, hi], memory_change })
}

#[wasm_bindgen(js_name = poseGraphDemo)]
pub fn pose_graph_demo_js(nodes: usize, heading_bias: f64, white: f64, loop_weight: f64, seed: u32) -> String {
    pose_graph_demo(nodes, heading_bias, white, loop_weight, seed as u64).map_or_else(error_json, |d| to_json(&d))
}

#[wasm_bindgen(js_name = pipelineDemo)]
pub fn pipeline_demo_js(frames: usize, drift_deg: f64, drift_mm: f64, sigma_mm: f64, seed: u32) -> String {
    pipeline_demo(frames, drift_deg, drift_mm, sigma_mm, seed as u64).map_or_else(error_json, |d| to_json(&d))
}

#[wasm_bindgen(js_name = gateExplorer)]
pub fn gate_explorer_js(memory_scale: f64, frame: usize, seed: u32) -> String {
    gate_explorer(memory_scale, frame, seed as u64).map_or_else(error_json, |d| to_json(&d))
}

