//! g2o text format: `VERTEX_SE3:QUAT`, `EDGE_SE3:QUAT`, `FIX` and an
//! `EDGE_SE3_PRIOR` against the identity offset parameter.
//!
//! g2o orders pose information as (translation, rotation); internally it is
//! (rotation, translation). Numbers are written in shortest round-trip form.

use std::fmt::Write as _;

use nalgebra::Vector3;

use super::{EdgeKind, Information, PoseEdge, PoseGraph, Prior};
use crate::error::{Error, Result};
use crate::geometry::{quaternion_from_file, SE3Pose};

/// Index map between the two 6-dof orderings (an involution).
const SWAP: [usize; 6] = [3, 4, 5, 0, 1, 2];

fn pose_fields(p: &SE3Pose) -> String {
    let (t, q) = (p.translation, p.rotation);
    format!("{} {} {} {} {} {} {}", t.x, t.y, t.z, q.x, q.y, q.z, q.w)
}

fn info_fields(info: &Information) -> String {
    let mut out = Vec::with_capacity(21);
    for i in 0..6 {
        for j in i..6 {
            out.push(format!("{}", info[(SWAP[i], SWAP[j])]));
        }
    }
    out.join(" ")
}

pub fn write_g2o(graph: &PoseGraph) -> String {
    let mut out = String::from("PARAMS_SE3OFFSET 0 0 0 0 0 0 0 1\n");
    for (id, pose) in &graph.nodes {
        let _ = writeln!(out, "VERTEX_SE3:QUAT {id} {}", pose_fields(pose));
    }
    let _ = writeln!(out, "FIX {}", graph.prior.node);
    for e in &graph.edges {
        let _ = writeln!(out, "EDGE_SE3:QUAT {} {} {} {}", e.u, e.v, pose_fields(&e.delta), info_fields(&e.information));
    }
    let p = &graph.prior;
    let _ = writeln!(out, "EDGE_SE3_PRIOR {} 0 {} {}", p.node, pose_fields(&p.pose), info_fields(&p.information));
    out
}

struct Fields<'a> {
    line: usize,
    tokens: std::str::SplitWhitespace<'a>,
}

impl Fields<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse { line: self.line, message: message.into() }
    }

    fn id(&mut self) -> Result<usize> {
        let tok = self.tokens.next().ok_or_else(|| self.err("missing id"))?;
        tok.parse().map_err(|_| self.err(format!("bad id {tok:?}")))
    }

    fn number(&mut self) -> Result<f64> {
        let tok = self.tokens.next().ok_or_else(|| self.err("missing value"))?;
        tok.parse().map_err(|_| self.err(format!("bad number {tok:?}")))
    }

    fn pose(&mut self) -> Result<SE3Pose> {
        let v: Vec<f64> = (0..7).map(|_| self.number()).collect::<Result<_>>()?;
        let rotation = quaternion_from_file(v[6], v[3], v[4], v[5]).ok_or_else(|| self.err("invalid quaternion"))?;
        Ok(SE3Pose { rotation, translation: Vector3::new(v[0], v[1], v[2]) })
    }

    fn information(&mut self) -> Result<Information> {
        let mut info = Information::zeros();
        for i in 0..6 {
            for j in i..6 {
                let v = self.number()?;
                info[(SWAP[i], SWAP[j])] = v;
                info[(SWAP[j], SWAP[i])] = v;
            }
        }
        Ok(info)
    }

    fn finish(mut self) -> Result<()> {
        match self.tokens.next() {
            Some(tok) => Err(self.err(format!("unexpected trailing field {tok:?}"))),
            None => Ok(()),
        }
    }
}

/// Parses a graph written by [`write_g2o`] or by standard tools. Edges
/// between consecutive ids are read as sequential, others as loops. Without
/// an explicit prior, the first fixed vertex (or the smallest id) is pinned
/// at its estimate with unit information scaled by `1e6`.
pub fn read_g2o(text: &str) -> Result<PoseGraph> {
    let mut nodes = std::collections::BTreeMap::new();
    let mut edges = Vec::new();
    let mut fixed = None;
    let mut prior = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let tag = tokens.next().expect("non-empty line");
        let mut f = Fields { line: idx + 1, tokens };
        match tag {
            "VERTEX_SE3:QUAT" => {
                let id = f.id()?;
                let pose = f.pose()?;
                f.finish()?;
                if nodes.insert(id, pose).is_some() {
                    return Err(Error::Parse { line: idx + 1, message: format!("duplicate vertex {id}") });
                }
            }
            "EDGE_SE3:QUAT" => {
                let (u, v) = (f.id()?, f.id()?);
                let delta = f.pose()?;
                let information = f.information()?;
                f.finish()?;
                let kind = if v == u + 1 { EdgeKind::Sequential } else { EdgeKind::Loop };
                edges.push(PoseEdge { u, v, delta, information, kind });
            }
            "EDGE_SE3_PRIOR" => {
                let node = f.id()?;
                let param = f.id()?;
                if param != 0 {
                    return Err(f.err("only the identity offset parameter 0 is supported"));
                }
                let pose = f.pose()?;
                let information = f.information()?;
                f.finish()?;
                prior = Some(Prior { node, pose, information });
            }
            "FIX" => {
                let id = f.id()?;
                f.finish()?;
                fixed.get_or_insert(id);
            }
            "PARAMS_SE3OFFSET" => {
                let id = f.id()?;
                let offset = f.pose()?;
                f.finish()?;
                if id != 0 || !offset.is_identity() {
                    return Err(Error::Parse { line: idx + 1, message: "only an identity offset is supported".into() });
                }
            }
            other => return Err(Error::Parse { line: idx + 1, message: format!("unknown tag {other:?}") }),
        }
    }
    let prior = match prior {
        Some(p) => p,
        None => {
            let node = fixed.or_else(|| nodes.keys().next().copied()).ok_or_else(|| Error::Graph("graph has no vertices".into()))?;
            let pose = *nodes.get(&node).ok_or_else(|| Error::Graph(format!("fixed vertex {node} is missing")))?;
            Prior { node, pose, information: Information::identity() * 1e6 }
        }
    };
    let graph = PoseGraph { nodes, edges, prior };
    graph.validate()?;
    Ok(graph)
}
