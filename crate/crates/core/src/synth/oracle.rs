use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::SyntheticSequence;
use crate::error::{Error, Result};
use crate::geometry::{apply, se3_exp, ConfidenceMap, PointMap, SE3Pose, Twist};
use crate::predictor::{FrameInput, FramePrediction, Predictor};

/// Corruption applied by the oracle predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// RMS 3D point error in meters.
    pub point_sigma: f64,
    /// Drift rotation per frame since the state reset, in radians.
    pub drift_rot: f64,
    /// Drift translation per frame since the state reset, in meters.
    pub drift_trans: f64,
    /// Drift axes in the camera frame of the reset frame.
    pub drift_rot_axis: [f64; 3],
    pub drift_trans_axis: [f64; 3],
    /// Confidence is `1 / (1 + coupling * m^2)` for per-pixel noise factor `m`.
    pub confidence_coupling: f64,
    /// Fraction of pixels marked invalid.
    pub dropout: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            point_sigma: 0.0,
            drift_rot: 0.0,
            drift_trans: 0.0,
            drift_rot_axis: [0.0, 1.0, 0.0],
            drift_trans_axis: [1.0, 0.0, 0.0],
            confidence_coupling: 1.0,
            dropout: 0.0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [self.point_sigma, self.drift_rot, self.drift_trans, self.confidence_coupling];
        if non_negative.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidConfig("noise magnitudes must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        for axis in [self.drift_rot_axis, self.drift_trans_axis] {
            if Vector3::from(axis).norm() == 0.0 {
                return Err(Error::InvalidConfig("drift axes must be non-zero".into()));
            }
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.point_sigma == 0.0 && self.dropout == 0.0
    }

    /// Accumulated drift after `frames` steps.
    pub fn drift(&self, frames: usize) -> Option<SE3Pose> {
        if self.drift_rot == 0.0 && self.drift_trans == 0.0 || frames == 0 {
            return None;
        }
        let n = frames as f64;
        let omega = Vector3::from(self.drift_rot_axis).normalize() * (self.drift_rot * n);
        let t = Vector3::from(self.drift_trans_axis).normalize() * (self.drift_trans * n);
        Some(SE3Pose::new(se3_exp(&Twist::new(omega, Vector3::zeros())).rotation, t))
    }
}

/// Latent state of the oracle: the frame observed first after a reset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OracleState {
    pub anchor: Option<usize>,
}

/// Ground truth with scripted corruption, behind the predictor interface.
#[derive(Debug, Clone)]
pub struct OraclePredictor<'a> {
    sequence: &'a SyntheticSequence,
    noise: NoiseSpec,
    seed: u64,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // SplitMix64 finalizer over the combined words.
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl<'a> OraclePredictor<'a> {
    pub fn new(sequence: &'a SyntheticSequence, noise: NoiseSpec) -> Result<Self> {
        noise.validate()?;
        Ok(Self { sequence, noise, seed: sequence.spec.seed })
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    /// Noise-free prediction of `frame` relative to `anchor`.
    pub fn ground_truth(&self, anchor: usize, frame: usize) -> Result<FramePrediction> {
        let poses = &self.sequence.poses;
        let pose = poses[anchor].between(&poses[frame]);
        let x_self = self.sequence.render_points(frame)?;
        let conf = ConfidenceMap::constant(x_self.width(), x_self.height(), 1.0)?;
        let x_world = apply(&pose, &x_self);
        Ok(FramePrediction { x_self, c_self: conf.clone(), x_world, c_world: conf, pose })
    }

    fn corrupt(&self, anchor: usize, frame: usize) -> Result<FramePrediction> {
        let mut pred = self.ground_truth(anchor, frame)?;
        if let Some(d) = self.noise.drift(frame.abs_diff(anchor)) {
            pred.pose = d.compose(&pred.pose);
        }
        if !self.noise.is_noiseless() {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, frame as u64, anchor as u64));
            let (w, h) = (pred.x_self.width(), pred.x_self.height());
            let mut points = PointMap::empty(w, h);
            let mut conf = vec![1.0; w * h];
            let per_axis = self.noise.point_sigma / 3f64.sqrt();
            let unit = Uniform::new(0.0, 1.0).expect("valid range");
            for i in 0..w * h {
                let m2: f64 = Exp1.sample(&mut rng);
                let n: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
                let drop = unit.sample(&mut rng) < self.noise.dropout;
                if !pred.x_self.is_valid(i) || drop {
                    continue;
                }
                let scale = per_axis * m2.sqrt();
                points.set(i, Some(pred.x_self.points()[i] + scale * Vector3::from(n)));
                conf[i] = 1.0 / (1.0 + self.noise.confidence_coupling * m2);
            }
            pred.x_self = points;
            pred.c_self = ConfidenceMap::new(w, h, conf)?;
            pred.c_world = pred.c_self.clone();
        }
        if !self.noise.is_noiseless() || self.noise.drift(1).is_some() {
            pred.x_world = apply(&pred.pose, &pred.x_self);
        }
        Ok(pred)
    }
}

impl Predictor for OraclePredictor<'_> {
    type State = OracleState;

    fn initial_state(&self) -> OracleState {
        OracleState::default()
    }

    fn step(&self, state: &OracleState, frame: &FrameInput<'_>) -> Result<(OracleState, FramePrediction)> {
        let len = self.sequence.len();
        if frame.index >= len {
            return Err(Error::OutOfRange { index: frame.index, len });
        }
        let anchor = state.anchor.unwrap_or(frame.index);
        let pred = self.corrupt(anchor, frame.index)?;
        Ok((OracleState { anchor: Some(anchor) }, pred))
    }
}
