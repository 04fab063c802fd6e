//! ASCII PLY point clouds with `x y z confidence` vertex properties.

use std::fmt::Write as _;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Point cloud with one confidence per point.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub confidence: Vec<f64>,
}

impl PointCloud {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        let confidence = vec![1.0; points.len()];
        Self { points, confidence }
    }

    pub fn push(&mut self, p: Vector3<f64>, c: f64) {
        self.points.push(p);
        self.confidence.push(c);
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
        self.confidence.extend_from_slice(&other.confidence);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_ply(&self) -> String {
        let mut out = String::with_capacity(64 + self.points.len() * 48);
        out.push_str("ply\nformat ascii 1.0\n");
        let _ = writeln!(out, "element vertex {}", self.points.len());
        out.push_str("property double x\nproperty double y\nproperty double z\nproperty double confidence\nend_header\n");
        for (p, c) in self.points.iter().zip(&self.confidence) {
            let _ = writeln!(out, "{} {} {} {}", p.x, p.y, p.z, c);
        }
        out
    }

    pub fn from_ply(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut count = None;
        let mut properties = Vec::new();
        match lines.next() {
            Some((_, "ply")) => {}
            _ => return Err(Error::Parse { line: 1, message: "missing ply magic".into() }),
        }
        for (idx, line) in lines.by_ref() {
            let line = line.trim();
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("format") => {
                    if tok.next() != Some("ascii") {
                        return Err(Error::Parse { line: idx + 1, message: "only ascii PLY is supported".into() });
                    }
                }
                Some("element") => {
                    if tok.next() == Some("vertex") {
                        let n = tok
                            .next()
                            .and_then(|v| v.parse::<usize>().ok())
                            .ok_or_else(|| Error::Parse { line: idx + 1, message: "bad vertex count".into() })?;
                        count = Some(n);
                    }
                }
                Some("property") => {
                    if let Some(name) = tok.last() {
                        properties.push(name.to_string());
                    }
                }
                Some("end_header") => break,
                _ => {}
            }
        }
        let count = count.ok_or_else(|| Error::Parse { line: 0, message: "no vertex element".into() })?;
        let column = |name: &str| properties.iter().position(|p| p == name);
        let (ix, iy, iz) = match (column("x"), column("y"), column("z")) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => return Err(Error::Parse { line: 0, message: "missing x/y/z properties".into() }),
        };
        let ic = column("confidence");
        let mut cloud = PointCloud::new();
        for (idx, line) in lines.take(count) {
            let values: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse { line: idx + 1, message: format!("{e}") })?;
            if values.len() < properties.len() {
                return Err(Error::Parse { line: idx + 1, message: "too few vertex fields".into() });
            }
            let c = ic.map(|i| values[i]).unwrap_or(1.0);
            cloud.push(Vector3::new(values[ix], values[iy], values[iz]), c);
        }
        if cloud.len() != count {
            return Err(Error::Parse { line: 0, message: format!("expected {count} vertices, found {}", cloud.len()) });
        }
        Ok(cloud)
    }
}
