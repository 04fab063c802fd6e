//! Intra-submap refinement over a keyframe-centered connectivity graph.
//!
//! Each edge is centered on a keyframe and holds one prediction per member
//! frame, expressed in the center's frame. The objective
//!
//! `sum_e sum_{v in e} sum_i C_i^{v,e} |xi_i^v - s_e P_e X_i^{v,e}|^2`
//!
//! is minimized by alternating closed-form steps: per-edge similarity fits
//! with the refined maps fixed, then confidence-weighted averages with the
//! transforms fixed. The anchor edge is pinned to the identity.

mod umeyama;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::Submap;
use crate::geometry::{ConfidenceMap, PointMap, SE3Pose, Sim3Transform};

pub use umeyama::{umeyama, weighted_residual, weighted_umeyama};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    /// Temporal half-window `k` around each keyframe, in frame ids.
    pub window: usize,
    /// Also connect each keyframe to the previous and next keyframe.
    pub link_keyframes: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { window: 2, link_keyframes: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub center: usize,
    /// Sorted member frame ids, including the center.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectivityGraph {
    pub vertices: Vec<usize>,
    pub edges: Vec<GraphEdge>,
    /// Index of the edge centered on the submap anchor.
    pub anchor_edge: usize,
}

impl ConnectivityGraph {
    /// Frames that are members of no edge.
    pub fn uncovered(&self) -> Vec<usize> {
        let covered: std::collections::BTreeSet<_> = self.edges.iter().flat_map(|e| e.members.iter().copied()).collect();
        self.vertices.iter().copied().filter(|v| !covered.contains(v)).collect()
    }
}

pub fn build_graph(submap: &Submap, cfg: &GraphConfig) -> Result<ConnectivityGraph> {
    if submap.frames.is_empty() || submap.keyframes.is_empty() {
        return Err(Error::Empty(format!("submap {} has no frames", submap.id)));
    }
    if cfg.window == 0 {
        return Err(Error::InvalidConfig("window must be at least 1".into()));
    }
    let mut vertices = submap.frames.clone();
    vertices.sort_unstable();
    let mut edges = Vec::with_capacity(submap.keyframes.len());
    for (ki, &center) in submap.keyframes.iter().enumerate() {
        if vertices.binary_search(&center).is_err() {
            return Err(Error::Graph(format!("keyframe {center} is not a frame of submap {}", submap.id)));
        }
        let lo = center.saturating_sub(cfg.window);
        let hi = center + cfg.window;
        let mut members: Vec<usize> = vertices.iter().copied().filter(|v| (lo..=hi).contains(v)).collect();
        if cfg.link_keyframes {
            if ki > 0 {
                members.push(submap.keyframes[ki - 1]);
            }
            if let Some(next) = submap.keyframes.get(ki + 1) {
                members.push(*next);
            }
            members.sort_unstable();
            members.dedup();
        }
        edges.push(GraphEdge { center, members });
    }
    let anchor_edge = edges
        .iter()
        .position(|e| e.center == submap.anchor)
        .ok_or_else(|| Error::Graph(format!("anchor {} of submap {} is not a keyframe", submap.anchor, submap.id)))?;
    Ok(ConnectivityGraph { vertices, edges, anchor_edge })
}

/// Prediction of one member frame within one edge context.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeObservation {
    pub frame: usize,
    pub points: PointMap,
    pub confidence: ConfidenceMap,
}

/// Graph plus per-edge observations (`observations[e][m]` belongs to
/// `graph.edges[e].members[m]`) and initial edge transforms.
#[derive(Debug, Clone)]
pub struct LocalProblem {
    pub graph: ConnectivityGraph,
    pub observations: Vec<Vec<EdgeObservation>>,
    pub initial: Vec<SE3Pose>,
}

impl LocalProblem {
    pub fn validate(&self) -> Result<()> {
        let g = &self.graph;
        if g.edges.is_empty() {
            return Err(Error::Empty("connectivity graph has no edges".into()));
        }
        if self.observations.len() != g.edges.len() || self.initial.len() != g.edges.len() {
            return Err(Error::ShapeMismatch("observations and initial transforms must match the edges".into()));
        }
        let mut shape = None;
        for (edge, obs) in g.edges.iter().zip(&self.observations) {
            if obs.len() != edge.members.len() {
                return Err(Error::ShapeMismatch(format!("edge {} has {} observations", edge.center, obs.len())));
            }
            for (m, o) in edge.members.iter().zip(obs) {
                if *m != o.frame || !o.confidence.matches(&o.points) {
                    return Err(Error::ShapeMismatch(format!("observation of frame {} is malformed", o.frame)));
                }
                match shape {
                    None => shape = Some(o.points.shape()),
                    Some(s) if s != o.points.shape() => {
                        return Err(Error::ShapeMismatch("all observations must share one resolution".into()))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Optimize a per-edge scale.
    pub with_scale: bool,
    /// Replace the initial transforms by chaining edge fits outward from the
    /// anchor edge before alternating.
    pub chain_init: bool,
    pub graph: GraphConfig,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self { max_iters: 100, rel_tol: 1e-9, with_scale: false, chain_init: true, graph: GraphConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolution {
    /// Refined pointmaps in the submap frame, keyed by frame id.
    pub refined: BTreeMap<usize, (PointMap, ConfidenceMap)>,
    pub edge_transforms: Vec<Sim3Transform>,
    /// Squared objective after the final half-step.
    pub loss: f64,
    /// Unsquared objective (sum of per-pixel weighted norms) at the solution.
    pub unsquared_loss: f64,
    /// Squared objective after initialization and after every half-step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LocalSolution {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,loss\n");
        for (i, l) in self.trace.iter().enumerate() {
            let _ = writeln!(out, "{i},{l:e}");
        }
        out
    }
}

fn objective(problem: &LocalProblem, xi: &BTreeMap<usize, PointMap>, transforms: &[Sim3Transform], squared: bool) -> f64 {
    let mut total = 0.0;
    for (obs, t) in problem.observations.iter().zip(transforms) {
        for o in obs {
            let target = &xi[&o.frame];
            for (i, x) in o.points.valid_points() {
                if !target.is_valid(i) {
                    continue;
                }
                let d = (target.points()[i] - t.transform_point(x)).norm_squared();
                total += o.confidence.get(i) * if squared { d } else { d.sqrt() };
            }
        }
    }
    total
}

fn average_step(problem: &LocalProblem, transforms: &[Sim3Transform]) -> BTreeMap<usize, (PointMap, ConfidenceMap)> {
    let first = &problem.observations[0][0].points;
    let (w, h) = (first.width(), first.height());
    let mut sums: BTreeMap<usize, (Vec<Vector3<f64>>, Vec<f64>)> = BTreeMap::new();
    for (obs, t) in problem.observations.iter().zip(transforms) {
        for o in obs {
            let (acc, wsum) = sums.entry(o.frame).or_insert_with(|| (vec![Vector3::zeros(); w * h], vec![0.0; w * h]));
            for (i, x) in o.points.valid_points() {
                let c = o.confidence.get(i);
                acc[i] += c * t.transform_point(x);
                wsum[i] += c;
            }
        }
    }
    sums.into_iter()
        .map(|(frame, (acc, wsum))| {
            let mut map = PointMap::empty(w, h);
            let mut conf = vec![f64::MIN_POSITIVE; w * h];
            for i in 0..w * h {
                if wsum[i] > 0.0 {
                    map.set(i, Some(acc[i] / wsum[i]));
                    conf[i] = wsum[i];
                }
            }
            (frame, (map, ConfidenceMap::new(w, h, conf).expect("positive confidences")))
        })
        .collect()
}

fn fit_edge(problem: &LocalProblem, e: usize, xi: &BTreeMap<usize, PointMap>, with_scale: bool) -> Result<Sim3Transform> {
    let (mut src, mut dst, mut wts) = (Vec::new(), Vec::new(), Vec::new());
    for o in &problem.observations[e] {
        let Some(target) = xi.get(&o.frame) else { continue };
        for (i, x) in o.points.valid_points() {
            if target.is_valid(i) {
                src.push(*x);
                dst.push(target.points()[i]);
                wts.push(o.confidence.get(i));
            }
        }
    }
    weighted_umeyama(&src, &dst, &wts, with_scale)
}

/// Alternating minimization of the squared objective. Each half-step is an
/// exact minimizer, so the trace is non-increasing up to rounding.
pub fn optimize_local(problem: &LocalProblem, cfg: &LocalConfig) -> Result<LocalSolution> {
    problem.validate()?;
    if cfg.max_iters == 0 || !(cfg.rel_tol >= 0.0) {
        return Err(Error::InvalidConfig("max_iters must be positive and rel_tol non-negative".into()));
    }
    let anchor = problem.graph.anchor_edge;
    let mut transforms: Vec<Sim3Transform> = problem.initial.iter().map(Sim3Transform::from_rigid).collect();
    transforms[anchor] = Sim3Transform::identity();
    if cfg.chain_init {
        chain_initialize(problem, &mut transforms, cfg.with_scale)?;
    }

    let mut refined = average_step(problem, &transforms);
    let maps = |r: &BTreeMap<usize, (PointMap, ConfidenceMap)>| r.iter().map(|(k, v)| (*k, v.0.clone())).collect::<BTreeMap<_, _>>();
    let mut xi = maps(&refined);
    let mut loss = objective(problem, &xi, &transforms, true);
    let mut trace = vec![loss];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let before = loss;
        let fits: Vec<Option<Result<Sim3Transform>>> = fit_all(problem, &xi, cfg.with_scale, anchor);
        for (e, fit) in fits.into_iter().enumerate() {
            match fit {
                None => {}
                Some(Ok(t)) => transforms[e] = t,
                // An edge without enough overlap keeps its transform.
                Some(Err(Error::Degenerate(_))) => {}
                Some(Err(err)) => return Err(err),
            }
        }
        trace.push(objective(problem, &xi, &transforms, true));
        refined = average_step(problem, &transforms);
        xi = maps(&refined);
        loss = objective(problem, &xi, &transforms, true);
        trace.push(loss);
        if before - loss <= cfg.rel_tol * before || loss <= f64::MIN_POSITIVE {
            converged = true;
            break;
        }
    }
    let unsquared_loss = objective(problem, &xi, &transforms, false);
    Ok(LocalSolution { refined, edge_transforms: transforms, loss, unsquared_loss, trace, iterations, converged })
}

/// Places edges one at a time, each fitted to the average of the already
/// placed edges over shared member frames. Edges that share too little keep
/// their initial transform.
fn chain_initialize(problem: &LocalProblem, transforms: &mut [Sim3Transform], with_scale: bool) -> Result<()> {
    let n = problem.graph.edges.len();
    let mut placed = vec![false; n];
    placed[problem.graph.anchor_edge] = true;
    loop {
        let mask: Vec<f64> = placed.iter().map(|p| if *p { 1.0 } else { 0.0 }).collect();
        let partial = average_subset(problem, transforms, &mask);
        let mut best: Option<(usize, usize)> = None;
        for e in (0..n).filter(|e| !placed[*e]) {
            let shared = problem.graph.edges[e].members.iter().filter(|f| partial.contains_key(*f)).count();
            if shared > 0 && best.is_none_or(|(_, s)| shared > s) {
                best = Some((e, shared));
            }
        }
        let Some((e, _)) = best else { break };
        placed[e] = true;
        match fit_edge(problem, e, &partial, with_scale) {
            Ok(t) => transforms[e] = t,
            Err(Error::Degenerate(_)) => {}
            Err(err) => return Err(err),
        }
    }
    Ok(())
}

fn average_subset(problem: &LocalProblem, transforms: &[Sim3Transform], mask: &[f64]) -> BTreeMap<usize, PointMap> {
    let first = &problem.observations[0][0].points;
    let (w, h) = (first.width(), first.height());
    let mut sums: BTreeMap<usize, (Vec<Vector3<f64>>, Vec<f64>)> = BTreeMap::new();
    for ((obs, t), m) in problem.observations.iter().zip(transforms).zip(mask) {
        if *m == 0.0 {
            continue;
        }
        for o in obs {
            let (acc, wsum) = sums.entry(o.frame).or_insert_with(|| (vec![Vector3::zeros(); w * h], vec![0.0; w * h]));
            for (i, x) in o.points.valid_points() {
                let c = o.confidence.get(i);
                acc[i] += c * t.transform_point(x);
                wsum[i] += c;
            }
        }
    }
    sums.into_iter()
        .map(|(frame, (acc, wsum))| {
            let mut map = PointMap::empty(w, h);
            for i in 0..w * h {
                if wsum[i] > 0.0 {
                    map.set(i, Some(acc[i] / wsum[i]));
                }
            }
            (frame, map)
        })
        .collect()
}

fn fit_all(
    problem: &LocalProblem,
    xi: &BTreeMap<usize, PointMap>,
    with_scale: bool,
    anchor: usize,
) -> Vec<Option<Result<Sim3Transform>>> {
    let fit = |e: usize| (e != anchor).then(|| fit_edge(problem, e, xi, with_scale));
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..problem.graph.edges.len()).into_par_iter().map(fit).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..problem.graph.edges.len()).map(fit).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{se3_exp, Twist};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn submap(frames: Vec<usize>, keyframes: Vec<usize>) -> Submap {
        Submap {
            id: 0,
            anchor: keyframes[0],
            keyframes,
            frames,
            pose: SE3Pose::identity(),
            finalized: true,
            boundary: None,
        }
    }

    #[test]
    fn window_arithmetic() {
        let g = build_graph(&submap((0..8).collect(), vec![0, 5]), &GraphConfig::default()).unwrap();
        assert_eq!(g.edges[0].members, vec![0, 1, 2]);
        assert_eq!(g.edges[1].members, vec![3, 4, 5, 6, 7]);
        assert_eq!(g.anchor_edge, 0);
        let single = build_graph(&submap(vec![4], vec![4]), &GraphConfig::default()).unwrap();
        assert_eq!(single.edges, vec![GraphEdge { center: 4, members: vec![4] }]);
        let linked = build_graph(&submap((0..8).collect(), vec![0, 5]), &GraphConfig { window: 2, link_keyframes: true }).unwrap();
        assert_eq!(linked.edges[0].members, vec![0, 1, 2, 5]);
        assert_eq!(linked.edges[1].members, vec![0, 3, 4, 5, 6, 7]);
    }

    fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize) -> PointMap {
        let pts = (0..w * h)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(1.0..3.0)))
            .collect();
        PointMap::from_points(w, h, pts).unwrap()
    }

    fn random_pose(rng: &mut ChaCha8Rng, scale: f64) -> SE3Pose {
        let v: [f64; 6] = std::array::from_fn(|_| rng.random_range(-scale..scale));
        se3_exp(&Twist::from_slice(&v))
    }

    /// Two edges sharing frame 2; edge 1 observations are expressed in a
    /// frame offset by `truth`.
    fn two_edge_problem(seed: u64) -> (LocalProblem, SE3Pose) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames: Vec<PointMap> = (0..5).map(|_| random_map(&mut rng, 4, 3)).collect();
        let truth = random_pose(&mut rng, 0.5);
        let conf = ConfidenceMap::constant(4, 3, 1.0).unwrap();
        let obs = |ids: &[usize], t: &SE3Pose| {
            ids.iter()
                .map(|&f| EdgeObservation { frame: f, points: crate::geometry::apply(t, &frames[f]), confidence: conf.clone() })
                .collect::<Vec<_>>()
        };
        let graph = build_graph(&submap((0..5).collect(), vec![0, 3]), &GraphConfig { window: 1, link_keyframes: true }).unwrap();
        assert_eq!(graph.edges[1].members, vec![0, 2, 3, 4]);
        let observations = vec![obs(&graph.edges[0].members, &SE3Pose::identity()), obs(&graph.edges[1].members, &truth.inverse())];
        (LocalProblem { graph, observations, initial: vec![SE3Pose::identity(); 2] }, truth)
    }

    #[test]
    fn recovers_known_edge_transform() {
        let (problem, truth) = two_edge_problem(5);
        let sol = optimize_local(&problem, &LocalConfig::default()).unwrap();
        let got = sol.edge_transforms[1].rigid();
        let (dt, dr) = got.distance(&truth);
        assert!(dt < 1e-6 && dr < 1e-6, "{dt} {dr}");
        assert!(sol.loss < 1e-10);
        for w in sol.trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn plain_alternation_is_monotone_and_converges() {
        let (problem, truth) = two_edge_problem(6);
        let cfg = LocalConfig { chain_init: false, max_iters: 200, rel_tol: 0.0, ..Default::default() };
        let sol = optimize_local(&problem, &cfg).unwrap();
        for w in sol.trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
        }
        let (dt, dr) = sol.edge_transforms[1].rigid().distance(&truth);
        assert!(dt < 1e-6 && dr < 1e-6, "{dt} {dr}");
    }

    #[test]
    fn consistent_single_edge_is_zero_after_one_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let maps: Vec<_> = (0..3).map(|_| random_map(&mut rng, 3, 3)).collect();
        let graph = build_graph(&submap(vec![0, 1, 2], vec![0]), &GraphConfig::default()).unwrap();
        let observations = vec![maps
            .iter()
            .enumerate()
            .map(|(f, m)| EdgeObservation { frame: f, points: m.clone(), confidence: ConfidenceMap::constant(3, 3, 2.0).unwrap() })
            .collect()];
        let sol = optimize_local(&LocalProblem { graph, observations, initial: vec![SE3Pose::identity()] }, &LocalConfig::default()).unwrap();
        assert!(sol.loss < 1e-12);
        assert_eq!(sol.iterations, 1);
        assert!(sol.edge_transforms[0].is_identity());
        assert!(sol.trace_csv().starts_with("iter,loss\n0,"));
    }

    #[test]
    fn rejects_mismatched_observations() {
        let (mut problem, _) = two_edge_problem(1);
        problem.observations[1].pop();
        assert!(optimize_local(&problem, &LocalConfig::default()).is_err());
    }
}
