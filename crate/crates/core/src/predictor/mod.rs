//! Gated recurrent pointmap predictor.
//!
//! Each frame is encoded into patch tokens, which interact with a persistent
//! set of memory tokens through a reset gate, a bidirectional
//! memory/image decoder and an update gate. Linear heads turn the decoded
//! tokens into camera-frame and world-frame point maps plus a camera pose.

mod config;
mod model;
pub mod nn;
mod weights;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ConfidenceMap, PointMap, SE3Pose};

pub use config::ModelConfig;
pub use model::{
    apply_reset, gated_update, DecoderBlock, Gate, GateOverride, Heads, PatchEncoder, ToyPredictor,
};
pub use weights::{read_snapshot, write_snapshot, WeightSnapshot};

/// RGB image, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch(format!(
                "image {width}x{height} needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// `N x D` patch tokens of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTokens(pub DMatrix<f64>);

/// `1 x D` pose token.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseToken(pub DMatrix<f64>);

/// `S x D` gate activations in the open interval `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateValues(pub DMatrix<f64>);

impl GateValues {
    pub fn constant(rows: usize, cols: usize, value: f64) -> Self {
        Self(DMatrix::from_element(rows, cols, value))
    }
}

/// Memory tokens carried from frame to frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub tokens: DMatrix<f64>,
    pub frames_seen: u64,
}

impl LatentState {
    pub fn new(tokens: DMatrix<f64>) -> Self {
        Self { tokens, frames_seen: 0 }
    }

    pub fn is_finite(&self) -> bool {
        self.tokens.iter().all(|v| v.is_finite())
    }
}

/// Everything the predictor emits for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePrediction {
    /// Points in the camera frame.
    pub x_self: PointMap,
    pub c_self: ConfidenceMap,
    /// Points in the frame of the current latent state (the submap frame).
    pub x_world: PointMap,
    pub c_world: ConfidenceMap,
    /// Camera-to-world pose.
    pub pose: SE3Pose,
}

impl FramePrediction {
    pub fn validate(&self) -> Result<()> {
        let shape = self.x_self.shape();
        if self.x_world.shape() != shape || !self.c_self.matches(&self.x_self) || !self.c_world.matches(&self.x_world) {
            return Err(Error::ShapeMismatch("prediction maps disagree in shape".into()));
        }
        Ok(())
    }
}

/// A frame handed to a predictor. Learned predictors read the image; the
/// synthetic oracle reads the index.
#[derive(Debug, Clone, Copy)]
pub struct FrameInput<'a> {
    pub index: usize,
    pub image: &'a Image,
}

/// Recurrent frame-to-pointmap interface shared by the toy network and the
/// synthetic oracle.
pub trait Predictor {
    type State: Clone;

    /// State at the start of a sequence or after a submap reset.
    fn initial_state(&self) -> Self::State;

    /// Advances the state by one frame. Must be a pure function of its
    /// arguments.
    fn step(&self, state: &Self::State, frame: &FrameInput<'_>) -> Result<(Self::State, FramePrediction)>;

    /// Prediction of `target` expressed in the frame of `reference`: the
    /// state is reset, `reference` is observed first, then `target`.
    fn predict_relative(&self, reference: &FrameInput<'_>, target: &FrameInput<'_>) -> Result<FramePrediction> {
        let (state, first) = self.step(&self.initial_state(), reference)?;
        if reference.index == target.index {
            return Ok(first);
        }
        let (_, pred) = self.step(&state, target)?;
        Ok(pred)
    }
}
