use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::se3::SE3Pose;
use super::sim3::Sim3Transform;
use crate::error::{Error, Result};

/// Anything that maps points of one frame into another.
pub trait PointTransform {
    fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64>;
    fn is_identity(&self) -> bool;
}

impl PointTransform for SE3Pose {
    fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        SE3Pose::transform_point(self, p)
    }
    fn is_identity(&self) -> bool {
        SE3Pose::is_identity(self)
    }
}

impl PointTransform for Sim3Transform {
    fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Sim3Transform::transform_point(self, p)
    }
    fn is_identity(&self) -> bool {
        Sim3Transform::is_identity(self)
    }
}

/// Row-major `height x width` grid of 3D points with a validity mask.
///
/// Invalid pixels store the zero vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMap {
    width: usize,
    height: usize,
    points: Vec<Vector3<f64>>,
    valid: Vec<bool>,
}

impl PointMap {
    /// All-invalid map.
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            points: vec![Vector3::zeros(); width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn new(width: usize, height: usize, points: Vec<Vector3<f64>>, valid: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ShapeMismatch(format!("point map must be non-empty, got {width}x{height}")));
        }
        if points.len() != width * height || valid.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "expected {} pixels, got {} points and {} mask entries",
                width * height,
                points.len(),
                valid.len()
            )));
        }
        let mut map = Self { width, height, points, valid };
        for i in 0..map.points.len() {
            if map.valid[i] && !map.points[i].iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidValue(format!("non-finite valid point at pixel {i}")));
            }
            if !map.valid[i] {
                map.points[i] = Vector3::zeros();
            }
        }
        Ok(map)
    }

    /// Map where every point is valid.
    pub fn from_points(width: usize, height: usize, points: Vec<Vector3<f64>>) -> Result<Self> {
        let valid = vec![true; points.len()];
        Self::new(width, height, points, valid)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn point(&self, row: usize, col: usize) -> Option<&Vector3<f64>> {
        let i = row * self.width + col;
        self.valid[i].then(|| &self.points[i])
    }

    pub fn is_valid(&self, index: usize) -> bool {
        self.valid[index]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Valid points with their pixel index.
    pub fn valid_points(&self) -> impl Iterator<Item = (usize, &Vector3<f64>)> + '_ {
        self.points.iter().enumerate().filter(move |(i, _)| self.valid[*i])
    }

    /// Valid points on a `stride x stride` pixel subgrid.
    pub fn subsampled(&self, stride: usize) -> Vec<Vector3<f64>> {
        let stride = stride.max(1);
        let mut out = Vec::new();
        for r in (0..self.height).step_by(stride) {
            for c in (0..self.width).step_by(stride) {
                let i = r * self.width + c;
                if self.valid[i] {
                    out.push(self.points[i]);
                }
            }
        }
        out
    }

    pub fn set(&mut self, index: usize, point: Option<Vector3<f64>>) {
        match point {
            Some(p) => {
                self.points[index] = p;
                self.valid[index] = true;
            }
            None => {
                self.points[index] = Vector3::zeros();
                self.valid[index] = false;
            }
        }
    }

    /// Mean Euclidean norm of valid points.
    pub fn mean_norm(&self) -> Option<f64> {
        let n = self.valid_count();
        (n > 0).then(|| self.valid_points().map(|(_, p)| p.norm()).sum::<f64>() / n as f64)
    }

    pub fn same_shape(&self, other: &PointMap) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Per-pixel positive confidences matching a [`PointMap`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ConfidenceMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height || width == 0 || height == 0 {
            return Err(Error::ShapeMismatch(format!(
                "confidence map {width}x{height} given {} values",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidValue(format!("confidence must be positive and finite, got {bad}")));
        }
        Ok(Self { width, height, values })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, index: usize) -> f64 {
        self.values[index]
    }

    pub fn matches(&self, map: &PointMap) -> bool {
        self.width == map.width() && self.height == map.height()
    }
}

/// Transforms every valid point; the validity mask is preserved.
pub fn apply<T: PointTransform>(transform: &T, map: &PointMap) -> PointMap {
    if transform.is_identity() {
        return map.clone();
    }
    let points = map
        .points
        .iter()
        .zip(&map.valid)
        .map(|(p, &ok)| if ok { transform.transform_point(p) } else { Vector3::zeros() })
        .collect();
    PointMap { width: map.width, height: map.height, points, valid: map.valid.clone() }
}
