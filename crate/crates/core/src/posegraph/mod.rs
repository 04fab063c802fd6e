//! SE(3) pose graph over submaps: sequential and loop-closure constraints,
//! a gauge-fixing prior, and Levenberg-Marquardt on the manifold.

mod g2o;
mod lm;
mod loops;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nalgebra::Matrix6;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::Submap;
use crate::geometry::{se3_log, PointCloud, SE3Pose, Trajectory, Twist};

pub use g2o::{read_g2o, write_g2o};
pub use lm::{optimize, LmConfig, OptimizeReport, StopReason};
pub use loops::{
    alignment_conditioning, detect_loops, pixel_normals, view_descriptor, KeyframeEntry, LoopCandidate, LoopConfig,
};

pub type Information = Matrix6<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Sequential,
    Loop,
}

/// Relative constraint `T_u^-1 T_v ~ delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEdge {
    pub u: usize,
    pub v: usize,
    pub delta: SE3Pose,
    pub information: Information,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub node: usize,
    pub pose: SE3Pose,
    pub information: Information,
}

/// Default information weights per constraint type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InformationConfig {
    pub sequential: f64,
    pub loop_closure: f64,
    pub prior: f64,
}

impl Default for InformationConfig {
    fn default() -> Self {
        Self { sequential: 1.0, loop_closure: 10.0, prior: 1e6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseGraph {
    pub nodes: BTreeMap<usize, SE3Pose>,
    pub edges: Vec<PoseEdge>,
    pub prior: Prior,
}

fn check_information(info: &Information) -> Result<()> {
    if (info - info.transpose()).amax() > 1e-12 * info.amax().max(1.0) || info.cholesky().is_none() {
        return Err(Error::Graph("information matrix must be symmetric positive definite".into()));
    }
    Ok(())
}

impl PoseGraph {
    /// Graph holding only the prior node, initialized at the prior pose.
    pub fn new(node: usize, pose: SE3Pose, information: Information) -> Result<Self> {
        check_information(&information)?;
        Ok(Self { nodes: BTreeMap::from([(node, pose)]), edges: Vec::new(), prior: Prior { node, pose, information } })
    }

    pub fn add_node(&mut self, id: usize, pose: SE3Pose) {
        self.nodes.insert(id, pose);
    }

    pub fn add_edge(&mut self, edge: PoseEdge) -> Result<()> {
        for n in [edge.u, edge.v] {
            if !self.nodes.contains_key(&n) {
                return Err(Error::Graph(format!("edge endpoint {n} is not a node")));
            }
        }
        check_information(&edge.information)?;
        self.edges.push(edge);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.nodes.contains_key(&self.prior.node) {
            return Err(Error::Graph(format!("prior node {} is missing", self.prior.node)));
        }
        check_information(&self.prior.information)?;
        for e in &self.edges {
            if !self.nodes.contains_key(&e.u) || !self.nodes.contains_key(&e.v) {
                return Err(Error::Graph(format!("edge {}-{} references a missing node", e.u, e.v)));
            }
            check_information(&e.information)?;
        }
        let mut seen = BTreeSet::from([self.prior.node]);
        let mut queue = VecDeque::from([self.prior.node]);
        while let Some(n) = queue.pop_front() {
            for e in &self.edges {
                let other = if e.u == n { e.v } else if e.v == n { e.u } else { continue };
                if seen.insert(other) {
                    queue.push_back(other);
                }
            }
        }
        if let Some(lost) = self.nodes.keys().find(|k| !seen.contains(k)) {
            return Err(Error::Graph(format!("node {lost} is not connected to the prior")));
        }
        Ok(())
    }

    pub fn edge_residual(&self, edge: &PoseEdge) -> Result<Twist> {
        edge_residual(&self.nodes[&edge.u], &self.nodes[&edge.v], &edge.delta)
    }

    pub fn prior_residual(&self) -> Result<Twist> {
        prior_residual(&self.nodes[&self.prior.node], &self.prior.pose)
    }

    /// `sum r^T Omega r` over edges and the prior.
    pub fn cost(&self) -> Result<f64> {
        let mut total = 0.0;
        for e in &self.edges {
            let r = self.edge_residual(e)?.0;
            total += (r.transpose() * e.information * r)[0];
        }
        let r = self.prior_residual()?.0;
        Ok(total + (r.transpose() * self.prior.information * r)[0])
    }

    pub fn relative(&self, u: usize, v: usize) -> Option<SE3Pose> {
        Some(self.nodes.get(&u)?.between(self.nodes.get(&v)?))
    }
}

pub fn edge_residual(tu: &SE3Pose, tv: &SE3Pose, delta: &SE3Pose) -> Result<Twist> {
    se3_log(&delta.inverse().compose(&tu.between(tv)))
}

pub fn prior_residual(t: &SE3Pose, prior: &SE3Pose) -> Result<Twist> {
    se3_log(&t.between(prior))
}

/// Constraint between consecutive submaps from the boundary frame observed in
/// both: `T_s^b (T_{s+1}^b)^-1`.
pub fn sequential_constraint(old: &Submap, new: &Submap, cfg: &InformationConfig) -> Result<PoseEdge> {
    let b = new
        .boundary
        .ok_or_else(|| Error::Graph(format!("submap {} has no boundary observation", new.id)))?;
    if !old.frames.contains(&b.frame) && b.frame != new.anchor {
        return Err(Error::Graph(format!("boundary frame {} is unrelated to submap {}", b.frame, old.id)));
    }
    Ok(PoseEdge {
        u: old.id,
        v: new.id,
        delta: b.pose_in_previous.compose(&b.pose_in_current.inverse()),
        information: Information::identity() * cfg.sequential,
        kind: EdgeKind::Sequential,
    })
}

/// Appends a constraint. A sequential edge to an unknown node initializes it
/// by composition; a loop edge triggers a full optimization.
pub fn incremental_update(graph: &mut PoseGraph, edge: PoseEdge, cfg: &LmConfig) -> Result<Option<OptimizeReport>> {
    if !graph.nodes.contains_key(&edge.u) {
        return Err(Error::Graph(format!("edge source {} is not a node", edge.u)));
    }
    if !graph.nodes.contains_key(&edge.v) {
        if edge.kind == EdgeKind::Loop {
            return Err(Error::Graph(format!("loop edge target {} is not a node", edge.v)));
        }
        let init = graph.nodes[&edge.u].compose(&edge.delta);
        graph.add_node(edge.v, init);
    }
    let kind = edge.kind;
    graph.add_edge(edge)?;
    if kind == EdgeKind::Loop {
        return optimize(graph, cfg).map(Some);
    }
    Ok(None)
}

/// Per-submap output of local refinement, in the submap frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SubmapResult {
    pub submap: usize,
    /// `(frame id, timestamp, camera pose in the submap frame)`.
    pub poses: Vec<(usize, f64, SE3Pose)>,
    pub cloud: PointCloud,
}

/// Maps every submap's refined points and poses into the world frame.
pub fn assemble_global_map(results: &[SubmapResult], graph: &PoseGraph) -> Result<(PointCloud, Trajectory)> {
    let mut ordered: Vec<&SubmapResult> = results.iter().collect();
    ordered.sort_by_key(|r| r.submap);
    for id in graph.nodes.keys() {
        if !ordered.iter().any(|r| r.submap == *id) {
            return Err(Error::Graph(format!("no local solution for submap {id}")));
        }
    }
    let mut cloud = PointCloud::new();
    let mut poses = Vec::new();
    for r in ordered {
        let t = graph
            .nodes
            .get(&r.submap)
            .ok_or_else(|| Error::Graph(format!("submap {} is not in the pose graph", r.submap)))?;
        for (p, c) in r.cloud.points.iter().zip(&r.cloud.confidence) {
            cloud.push(t.transform_point(p), *c);
        }
        poses.extend(r.poses.iter().map(|(id, ts, p)| (*id, *ts, t.compose(p))));
    }
    poses.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let traj = Trajectory::from_entries(poses.into_iter().map(|(_, ts, p)| (ts, p)).collect())?;
    Ok((cloud, traj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::Boundary;
    use crate::geometry::{se3_exp, Quaternion};
    use nalgebra::Vector3;

    fn pose(tx: f64, yaw: f64) -> SE3Pose {
        SE3Pose::new(Quaternion::from_rotation_vector(&Vector3::new(0.0, 0.0, yaw)), Vector3::new(tx, 0.0, 0.0))
    }

    fn submap(id: usize, anchor: usize, boundary: Option<Boundary>) -> Submap {
        Submap { id, anchor, keyframes: vec![anchor], frames: vec![anchor], pose: SE3Pose::identity(), finalized: true, boundary }
    }

    #[test]
    fn sequential_constraint_from_boundary() {
        let cfg = InformationConfig::default();
        let same = Boundary { frame: 4, pose_in_previous: pose(1.0, 0.2), pose_in_current: pose(1.0, 0.2) };
        let e = sequential_constraint(&submap(0, 0, None), &submap(1, 4, Some(same)), &cfg).unwrap();
        let (dt, dr) = e.delta.distance(&SE3Pose::identity());
        assert!(dt < 1e-15 && dr < 1e-15);
        let b = Boundary { frame: 4, pose_in_previous: pose(2.0, 0.3), pose_in_current: SE3Pose::identity() };
        let e = sequential_constraint(&submap(0, 0, None), &submap(1, 4, Some(b)), &cfg).unwrap();
        assert_eq!(e.delta, pose(2.0, 0.3));
        assert!(sequential_constraint(&submap(0, 0, None), &submap(1, 4, None), &cfg).is_err());
    }

    #[test]
    fn incremental_sequential_initializes_by_composition() {
        let mut g = PoseGraph::new(0, SE3Pose::identity(), Information::identity() * 1e6).unwrap();
        let edge = PoseEdge { u: 0, v: 1, delta: pose(1.0, 0.1), information: Information::identity(), kind: EdgeKind::Sequential };
        assert!(incremental_update(&mut g, edge, &LmConfig::default()).unwrap().is_none());
        assert_eq!(g.nodes[&1], pose(1.0, 0.1));
        let bad = PoseEdge { u: 0, v: 7, delta: pose(1.0, 0.1), information: Information::identity(), kind: EdgeKind::Loop };
        assert!(incremental_update(&mut g, bad, &LmConfig::default()).is_err());
    }

    #[test]
    fn validation_catches_bad_graphs() {
        let mut g = PoseGraph::new(0, SE3Pose::identity(), Information::identity()).unwrap();
        g.add_node(1, SE3Pose::identity());
        assert!(matches!(g.validate(), Err(Error::Graph(_))));
        let mut asym = Information::identity();
        asym[(0, 1)] = 0.5;
        let e = PoseEdge { u: 0, v: 1, delta: SE3Pose::identity(), information: asym, kind: EdgeKind::Sequential };
        assert!(g.add_edge(e).is_err());
    }

    #[test]
    fn assembly_maps_points_and_sorts_poses() {
        let mut g = PoseGraph::new(0, SE3Pose::identity(), Information::identity()).unwrap();
        g.add_node(1, se3_exp(&Twist::new(Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0))));
        let r0 = SubmapResult { submap: 0, poses: vec![(0, 0.0, SE3Pose::identity())], cloud: PointCloud::from_points(vec![Vector3::z()]) };
        let r1 = SubmapResult { submap: 1, poses: vec![(1, 1.0, SE3Pose::identity())], cloud: PointCloud::from_points(vec![Vector3::z()]) };
        let (c1, t1) = assemble_global_map(&[r1.clone(), r0.clone()], &g).unwrap();
        let (c2, t2) = assemble_global_map(&[r0.clone(), r1], &g).unwrap();
        assert_eq!((&c1, &t1), (&c2, &t2));
        assert_eq!(c1.points[1], Vector3::new(1.0, 0.0, 1.0));
        assert_eq!(t1.entries()[1].1.translation, Vector3::new(1.0, 0.0, 0.0));
        assert!(assemble_global_map(&[r0], &g).is_err());
    }
}
