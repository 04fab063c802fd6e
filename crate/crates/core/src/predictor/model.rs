use nalgebra::{DMatrix, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::nn::{
    prefixed, random_matrix, sigmoid, sinusoidal_encoding, softplus, Attention, LayerNorm, Linear, Mlp, Module,
    ParamVisitor, ParamVisitorMut, INIT_SCALE,
};
use super::{FrameInput, FramePrediction, GateValues, Image, ImageTokens, LatentState, ModelConfig, PoseToken, Predictor};
use crate::error::{Error, Result};
use crate::geometry::{ConfidenceMap, PointMap, Quaternion, SE3Pose};

/// Linear patch projection plus a fixed sinusoidal position code.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEncoder {
    pub projection: Linear,
    positional: DMatrix<f64>,
}

impl PatchEncoder {
    fn new(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        Self {
            projection: Linear::new(rng, cfg.patch_values(), cfg.dim),
            positional: sinusoidal_encoding(cfg.tokens(), cfg.dim),
        }
    }

    pub fn positional(&self) -> &DMatrix<f64> {
        &self.positional
    }
}

impl Module for PatchEncoder {
    fn visit_params(&self, prefix: &str, v: &mut dyn ParamVisitor) {
        self.projection.visit_params(&prefixed(prefix, "projection"), v);
    }
    fn visit_params_mut(&mut self, prefix: &str, v: &mut dyn ParamVisitorMut) {
        self.projection.visit_params_mut(&prefixed(prefix, "projection"), v);
    }
}

/// Reset or update gate: self-attention over the memory, cross-attention
/// from memory to image tokens, a two-layer MLP and a sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub memory_norm: LayerNorm,
    pub self_attention: Attention,
    pub context_norm: LayerNorm,
    pub cross_attention: Attention,
    pub mlp_norm: LayerNorm,
    pub mlp: Mlp,
}

impl Gate {
    fn new(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        Self {
            memory_norm: LayerNorm::new(cfg.dim),
            self_attention: Attention::new(rng, cfg.dim, cfg.heads),
            context_norm: LayerNorm::new(cfg.dim),
            cross_attention: Attention::new(rng, cfg.dim, cfg.heads),
            mlp_norm: LayerNorm::new(cfg.dim),
            mlp: Mlp::new(rng, cfg.dim, 2 * cfg.dim, cfg.dim),
        }
    }

    /// Gate activations for every memory entry.
    pub fn forward(&self, memory: &LatentState, image: &ImageTokens) -> GateValues {
        let m = &memory.tokens;
        let normed = self.memory_norm.forward(m);
        let h = m + self.self_attention.forward(&normed, &normed);
        let ctx = self.context_norm.forward(&image.0);
        let h = &h + self.cross_attention.forward(&self.memory_norm.forward(&h), &ctx);
        let logits = self.mlp.forward(&self.mlp_norm.forward(&h));
        GateValues(logits.map(sigmoid))
    }

    /// Zeroes every parameter so the gate outputs exactly `sigmoid(0)`.
    pub fn zero_weights(&mut self) {
        struct Zero;
        impl ParamVisitorMut for Zero {
            fn visit(&mut self, _: &str, t: &mut DMatrix<f64>) {
                t.fill(0.0);
            }
        }
        self.visit_params_mut("", &mut Zero);
    }
}

impl Module for Gate {
    fn visit_params(&self, prefix: &str, v: &mut dyn ParamVisitor) {
        self.memory_norm.visit_params(&prefixed(prefix, "memory_norm"), v);
        self.self_attention.visit_params(&prefixed(prefix, "self_attention"), v);
        self.context_norm.visit_params(&prefixed(prefix, "context_norm"), v);
        self.cross_attention.visit_params(&prefixed(prefix, "cross_attention"), v);
        self.mlp_norm.visit_params(&prefixed(prefix, "mlp_norm"), v);
        self.mlp.visit_params(&prefixed(prefix, "mlp"), v);
    }
    fn visit_params_mut(&mut self, prefix: &str, v: &mut dyn ParamVisitorMut) {
        self.memory_norm.visit_params_mut(&prefixed(prefix, "memory_norm"), v);
        self.self_attention.visit_params_mut(&prefixed(prefix, "self_attention"), v);
        self.context_norm.visit_params_mut(&prefixed(prefix, "context_norm"), v);
        self.cross_attention.visit_params_mut(&prefixed(prefix, "cross_attention"), v);
        self.mlp_norm.visit_params_mut(&prefixed(prefix, "mlp_norm"), v);
        self.mlp.visit_params_mut(&prefixed(prefix, "mlp"), v);
    }
}

/// One decoder block. The memory stream and the pose+image stream attend to
/// each other (both directions read the block inputs), then each stream
/// passes through its own feed-forward layer. Residual, pre-norm.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderBlock {
    pub memory_norm: LayerNorm,
    pub frame_norm: LayerNorm,
    pub memory_from_frame: Attention,
    pub frame_from_memory: Attention,
    pub memory_ffn_norm: LayerNorm,
    pub memory_ffn: Mlp,
    pub frame_ffn_norm: LayerNorm,
    pub frame_ffn: Mlp,
}

impl DecoderBlock {
    fn new(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let d = cfg.dim;
        Self {
            memory_norm: LayerNorm::new(d),
            frame_norm: LayerNorm::new(d),
            memory_from_frame: Attention::new(rng, d, cfg.heads),
            frame_from_memory: Attention::new(rng, d, cfg.heads),
            memory_ffn_norm: LayerNorm::new(d),
            memory_ffn: Mlp::new(rng, d, 2 * d, d),
            frame_ffn_norm: LayerNorm::new(d),
            frame_ffn: Mlp::new(rng, d, 2 * d, d),
        }
    }

    pub fn forward(&self, memory: &DMatrix<f64>, frame: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let m_n = self.memory_norm.forward(memory);
        let f_n = self.frame_norm.forward(frame);
        let m = memory + self.memory_from_frame.forward(&m_n, &f_n);
        let f = frame + self.frame_from_memory.forward(&f_n, &m_n);
        let m = &m + self.memory_ffn.forward(&self.memory_ffn_norm.forward(&m));
        let f = &f + self.frame_ffn.forward(&self.frame_ffn_norm.forward(&f));
        (m, f)
    }
}

impl Module for DecoderBlock {
    fn visit_params(&self, prefix: &str, v: &mut dyn ParamVisitor) {
        self.memory_norm.visit_params(&prefixed(prefix, "memory_norm"), v);
        self.frame_norm.visit_params(&prefixed(prefix, "frame_norm"), v);
        self.memory_from_frame.visit_params(&prefixed(prefix, "memory_from_frame"), v);
        self.frame_from_memory.visit_params(&prefixed(prefix, "frame_from_memory"), v);
        self.memory_ffn_norm.visit_params(&prefixed(prefix, "memory_ffn_norm"), v);
        self.memory_ffn.visit_params(&prefixed(prefix, "memory_ffn"), v);
        self.frame_ffn_norm.visit_params(&prefixed(prefix, "frame_ffn_norm"), v);
        self.frame_ffn.visit_params(&prefixed(prefix, "frame_ffn"), v);
    }
    fn visit_params_mut(&mut self, prefix: &str, v: &mut dyn ParamVisitorMut) {
        self.memory_norm.visit_params_mut(&prefixed(prefix, "memory_norm"), v);
        self.frame_norm.visit_params_mut(&prefixed(prefix, "frame_norm"), v);
        self.memory_from_frame.visit_params_mut(&prefixed(prefix, "memory_from_frame"), v);
        self.frame_from_memory.visit_params_mut(&prefixed(prefix, "frame_from_memory"), v);
        self.memory_ffn_norm.visit_params_mut(&prefixed(prefix, "memory_ffn_norm"), v);
        self.memory_ffn.visit_params_mut(&prefixed(prefix, "memory_ffn"), v);
        self.frame_ffn_norm.visit_params_mut(&prefixed(prefix, "frame_ffn_norm"), v);
        self.frame_ffn.visit_params_mut(&prefixed(prefix, "frame_ffn"), v);
    }
}

/// Per-patch linear point heads and the MLP pose head.
#[derive(Debug, Clone, PartialEq)]
pub struct Heads {
    /// `D -> P*P*4` (xyz + raw confidence per pixel).
    pub self_points: Linear,
    /// `2D -> P*P*4`, reading each image token concatenated with the pose token.
    pub world_points: Linear,
    /// `D -> D -> 7` (translation, then quaternion `w x y z`).
    pub pose: Mlp,
}

impl Heads {
    fn new(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let per_patch = cfg.patch * cfg.patch * 4;
        let mut self_points = Linear::new(rng, cfg.dim, per_patch);
        let mut world_points = Linear::new(rng, 2 * cfg.dim, per_patch);
        // Untrained heads start one unit in front of the camera.
        for k in 0..cfg.patch * cfg.patch {
            self_points.bias[k * 4 + 2] = 1.0;
            world_points.bias[k * 4 + 2] = 1.0;
        }
        let mut pose = Mlp::new(rng, cfg.dim, cfg.dim, 7);
        pose.out.bias[3] = 1.0;
        Self { self_points, world_points, pose }
    }
}

impl Module for Heads {
    fn visit_params(&self, prefix: &str, v: &mut dyn ParamVisitor) {
        self.self_points.visit_params(&prefixed(prefix, "self_points"), v);
        self.world_points.visit_params(&prefixed(prefix, "world_points"), v);
        self.pose.visit_params(&prefixed(prefix, "pose"), v);
    }
    fn visit_params_mut(&mut self, prefix: &str, v: &mut dyn ParamVisitorMut) {
        self.self_points.visit_params_mut(&prefixed(prefix, "self_points"), v);
        self.world_points.visit_params_mut(&prefixed(prefix, "world_points"), v);
        self.pose.visit_params_mut(&prefixed(prefix, "pose"), v);
    }
}

/// Test-harness replacement of gate activations by constants.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GateOverride {
    pub reset: Option<f64>,
    pub update: Option<f64>,
}

/// `M_reset = R * M_prev`, element-wise.
pub fn apply_reset(reset: &GateValues, previous: &LatentState) -> Result<LatentState> {
    check_gate_shape(reset, previous)?;
    Ok(LatentState { tokens: reset.0.component_mul(&previous.tokens), frames_seen: previous.frames_seen })
}

/// `M_t = U * M_hat + (1 - U) * M_prev`, element-wise. Gate values of
/// exactly 0 or 1 select the corresponding input verbatim.
pub fn gated_update(update: &GateValues, decoded: &LatentState, previous: &LatentState) -> Result<LatentState> {
    check_gate_shape(update, previous)?;
    if decoded.tokens.shape() != previous.tokens.shape() {
        return Err(Error::ShapeMismatch("decoded and previous memory differ in shape".into()));
    }
    let tokens = DMatrix::from_fn(previous.tokens.nrows(), previous.tokens.ncols(), |i, j| {
        let u = update.0[(i, j)];
        let (new, old) = (decoded.tokens[(i, j)], previous.tokens[(i, j)]);
        if u == 0.0 {
            old
        } else if u == 1.0 {
            new
        } else {
            u * new + (1.0 - u) * old
        }
    });
    Ok(LatentState { tokens, frames_seen: previous.frames_seen + 1 })
}

fn check_gate_shape(gate: &GateValues, state: &LatentState) -> Result<()> {
    if gate.0.shape() != state.tokens.shape() {
        return Err(Error::ShapeMismatch(format!(
            "gate {:?} vs memory {:?}",
            gate.0.shape(),
            state.tokens.shape()
        )));
    }
    Ok(())
}

/// Toy-scale gated recurrent predictor with seeded weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPredictor {
    cfg: ModelConfig,
    pub encoder: PatchEncoder,
    pub reset_gate: Gate,
    pub update_gate: Gate,
    pub blocks: Vec<DecoderBlock>,
    pub heads: Heads,
    /// Memory tokens restored on every reset.
    pub initial_memory: DMatrix<f64>,
    /// Pose token fed to the decoder at every frame.
    pub pose_token: DMatrix<f64>,
    pub gate_override: GateOverride,
}

impl ToyPredictor {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let encoder = PatchEncoder::new(&mut rng, &cfg);
        let reset_gate = Gate::new(&mut rng, &cfg);
        let update_gate = Gate::new(&mut rng, &cfg);
        let blocks = (0..cfg.blocks).map(|_| DecoderBlock::new(&mut rng, &cfg)).collect();
        let heads = Heads::new(&mut rng, &cfg);
        let initial_memory = random_matrix(&mut rng, cfg.state_tokens, cfg.dim, INIT_SCALE);
        let pose_token = random_matrix(&mut rng, 1, cfg.dim, INIT_SCALE);
        Ok(Self {
            cfg,
            encoder,
            reset_gate,
            update_gate,
            blocks,
            heads,
            initial_memory,
            pose_token,
            gate_override: GateOverride::default(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn with_gate_override(mut self, gate_override: GateOverride) -> Self {
        self.gate_override = gate_override;
        self
    }

    /// Seeded initial memory.
    pub fn reset(&self) -> LatentState {
        LatentState::new(self.initial_memory.clone())
    }

    pub fn initial_pose_token(&self) -> PoseToken {
        PoseToken(self.pose_token.clone())
    }

    /// Splits the image into `P x P` patches (row-major patch order, each
    /// patch flattened row-major with interleaved RGB) and projects them.
    pub fn encode(&self, image: &Image) -> Result<ImageTokens> {
        let cfg = &self.cfg;
        if image.width != cfg.width || image.height != cfg.height {
            return Err(Error::ShapeMismatch(format!(
                "image is {}x{}, model expects {}x{}",
                image.width, image.height, cfg.width, cfg.height
            )));
        }
        let p = cfg.patch;
        let mut patches = DMatrix::zeros(cfg.tokens(), cfg.patch_values());
        for pr in 0..cfg.patch_rows() {
            for pc in 0..cfg.patch_cols() {
                let token = pr * cfg.patch_cols() + pc;
                for i in 0..p {
                    for j in 0..p {
                        let rgb = image.pixel(pr * p + i, pc * p + j);
                        for (ch, v) in rgb.iter().enumerate() {
                            patches[(token, (i * p + j) * 3 + ch)] = *v;
                        }
                    }
                }
            }
        }
        Ok(ImageTokens(self.encoder.projection.forward(&patches) + &self.encoder.positional))
    }

    pub fn reset_gate(&self, memory: &LatentState, image: &ImageTokens) -> GateValues {
        match self.gate_override.reset {
            Some(v) => GateValues::constant(memory.tokens.nrows(), memory.tokens.ncols(), v),
            None => self.reset_gate.forward(memory, image),
        }
    }

    pub fn update_gate(&self, memory: &LatentState, image: &ImageTokens) -> GateValues {
        match self.gate_override.update {
            Some(v) => GateValues::constant(memory.tokens.nrows(), memory.tokens.ncols(), v),
            None => self.update_gate.forward(memory, image),
        }
    }

    /// Runs the decoder blocks over `[memory, pose ++ image]`.
    pub fn decode(
        &self,
        memory: &LatentState,
        pose: &PoseToken,
        image: &ImageTokens,
    ) -> Result<(LatentState, PoseToken, ImageTokens)> {
        let d = self.cfg.dim;
        if memory.tokens.ncols() != d || pose.0.shape() != (1, d) || image.0.ncols() != d {
            return Err(Error::ShapeMismatch("decoder inputs must have the model token dim".into()));
        }
        let n = image.0.nrows();
        let mut frame = DMatrix::zeros(n + 1, d);
        frame.rows_mut(0, 1).copy_from(&pose.0);
        frame.rows_mut(1, n).copy_from(&image.0);
        let mut m = memory.tokens.clone();
        for block in &self.blocks {
            let (m_next, f_next) = block.forward(&m, &frame);
            m = m_next;
            frame = f_next;
        }
        let pose_out = PoseToken(frame.rows(0, 1).into_owned());
        let image_out = ImageTokens(frame.rows(1, n).into_owned());
        Ok((LatentState { tokens: m, frames_seen: memory.frames_seen }, pose_out, image_out))
    }

    /// Camera-frame points and confidences.
    pub fn head_self(&self, image: &ImageTokens) -> (PointMap, ConfidenceMap) {
        let raw = self.heads.self_points.forward(&image.0);
        self.assemble_points(&raw)
    }

    /// World-frame points and confidences, conditioned on the pose token.
    pub fn head_world(&self, image: &ImageTokens, pose: &PoseToken) -> (PointMap, ConfidenceMap) {
        let n = image.0.nrows();
        let d = self.cfg.dim;
        let mut joint = DMatrix::zeros(n, 2 * d);
        joint.columns_mut(0, d).copy_from(&image.0);
        for r in 0..n {
            joint.view_mut((r, d), (1, d)).copy_from(&pose.0);
        }
        let raw = self.heads.world_points.forward(&joint);
        self.assemble_points(&raw)
    }

    /// Camera pose from the pose token; the quaternion is normalized.
    pub fn head_pose(&self, pose: &PoseToken) -> SE3Pose {
        let v = self.heads.pose.forward(&pose.0);
        let q = Quaternion::from_raw(v[3], v[4], v[5], v[6]);
        SE3Pose { rotation: q.normalize(), translation: Vector3::new(v[0], v[1], v[2]) }
    }

    fn assemble_points(&self, raw: &DMatrix<f64>) -> (PointMap, ConfidenceMap) {
        let cfg = &self.cfg;
        let p = cfg.patch;
        let mut points = vec![Vector3::zeros(); cfg.width * cfg.height];
        let mut conf = vec![1.0; cfg.width * cfg.height];
        for pr in 0..cfg.patch_rows() {
            for pc in 0..cfg.patch_cols() {
                let token = pr * cfg.patch_cols() + pc;
                for i in 0..p {
                    for j in 0..p {
                        let k = (i * p + j) * 4;
                        let pixel = (pr * p + i) * cfg.width + pc * p + j;
                        points[pixel] = Vector3::new(raw[(token, k)], raw[(token, k + 1)], raw[(token, k + 2)]);
                        conf[pixel] = 1.0 + softplus(raw[(token, k + 3)]);
                    }
                }
            }
        }
        let map = PointMap::from_points(cfg.width, cfg.height, points).expect("head output has model shape");
        let conf = ConfidenceMap::new(cfg.width, cfg.height, conf).expect("confidences exceed one");
        (map, conf)
    }

    /// One recurrent step: encode, gate, decode, update, read out.
    pub fn step_image(&self, state: &LatentState, image: &Image) -> Result<(LatentState, FramePrediction)> {
        let tokens = self.encode(image)?;
        let reset = self.reset_gate(state, &tokens);
        let update = self.update_gate(state, &tokens);
        let reset_memory = apply_reset(&reset, state)?;
        let (decoded, pose_out, image_out) = self.decode(&reset_memory, &self.initial_pose_token(), &tokens)?;
        let next = gated_update(&update, &decoded, state)?;
        let (x_self, c_self) = self.head_self(&image_out);
        let (x_world, c_world) = self.head_world(&image_out, &pose_out);
        let pose = self.head_pose(&pose_out);
        Ok((next, FramePrediction { x_self, c_self, x_world, c_world, pose }))
    }

    /// All parameters in a fixed order.
    pub fn visit_all(&self, v: &mut dyn ParamVisitor) {
        self.encoder.visit_params("encoder", v);
        self.reset_gate.visit_params("reset_gate", v);
        self.update_gate.visit_params("update_gate", v);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_params(&format!("decoder.{i}"), v);
        }
        self.heads.visit_params("heads", v);
        v.visit("state.initial_memory", &self.initial_memory);
        v.visit("state.pose_token", &self.pose_token);
    }

    pub fn visit_all_mut(&mut self, v: &mut dyn ParamVisitorMut) {
        self.encoder.visit_params_mut("encoder", v);
        self.reset_gate.visit_params_mut("reset_gate", v);
        self.update_gate.visit_params_mut("update_gate", v);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params_mut(&format!("decoder.{i}"), v);
        }
        self.heads.visit_params_mut("heads", v);
        v.visit("state.initial_memory", &mut self.initial_memory);
        v.visit("state.pose_token", &mut self.pose_token);
    }

    /// Total scalar parameter count.
    pub fn parameter_count(&self) -> usize {
        struct Count(usize);
        impl ParamVisitor for Count {
            fn visit(&mut self, _: &str, t: &DMatrix<f64>) {
                self.0 += t.len();
            }
        }
        let mut c = Count(0);
        self.visit_all(&mut c);
        c.0
    }
}

impl Predictor for ToyPredictor {
    type State = LatentState;

    fn initial_state(&self) -> LatentState {
        self.reset()
    }

    fn step(&self, state: &LatentState, frame: &FrameInput<'_>) -> Result<(LatentState, FramePrediction)> {
        self.step_image(state, frame.image)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured_image(cfg: &ModelConfig, phase: f64) -> Image {
        let mut data = Vec::with_capacity(cfg.width * cfg.height * 3);
        for r in 0..cfg.height {
            for c in 0..cfg.width {
                let u = c as f64 / cfg.width as f64;
                let v = r as f64 / cfg.height as f64;
                data.push(0.5 + 0.5 * (6.0 * u + phase).sin());
                data.push(v);
                data.push(0.5 + 0.5 * (4.0 * (u + v) - phase).cos());
            }
        }
        Image::new(cfg.width, cfg.height, data).unwrap()
    }

    #[test]
    fn zero_image_gives_positional_plus_bias() {
        let cfg = ModelConfig::default();
        let mut model = ToyPredictor::new(cfg).unwrap();
        model.encoder.projection.bias.fill(0.25);
        let tokens = model.encode(&Image::zeros(cfg.width, cfg.height)).unwrap();
        let expected = model.encoder.positional().add_scalar(0.25);
        assert_eq!(tokens.0, expected);
    }

    #[test]
    fn token_shape_follows_config() {
        let cfg = ModelConfig { dim: 16, ..Default::default() };
        let model = ToyPredictor::new(cfg).unwrap();
        let tokens = model.encode(&textured_image(&cfg, 0.0)).unwrap();
        assert_eq!(tokens.0.shape(), (16, 16));
    }

    #[test]
    fn encode_rejects_wrong_size() {
        let model = ToyPredictor::new(ModelConfig::default()).unwrap();
        assert!(matches!(model.encode(&Image::zeros(16, 32)), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zero_weight_gate_is_one_half() {
        let cfg = ModelConfig::default();
        let mut model = ToyPredictor::new(cfg).unwrap();
        model.reset_gate.zero_weights();
        let tokens = model.encode(&textured_image(&cfg, 1.0)).unwrap();
        let r = model.reset_gate(&model.reset(), &tokens);
        assert!(r.0.iter().all(|v| *v == 0.5));
    }

    #[test]
    fn reset_extremes_and_hand_product() {
        let prev = LatentState::new(DMatrix::from_row_slice(2, 2, &[1.5, -2.0, 0.25, 4.0]));
        let ones = apply_reset(&GateValues::constant(2, 2, 1.0), &prev).unwrap();
        assert_eq!(ones.tokens, prev.tokens);
        let zeros = apply_reset(&GateValues::constant(2, 2, 0.0), &prev).unwrap();
        assert!(zeros.tokens.iter().all(|v| *v == 0.0));
        let r = GateValues(DMatrix::from_row_slice(2, 2, &[0.5, 0.25, 0.1, 0.75]));
        let out = apply_reset(&r, &prev).unwrap();
        assert_eq!(out.tokens, DMatrix::from_row_slice(2, 2, &[0.75, -0.5, 0.025, 3.0]));
    }

    #[test]
    fn gated_update_extremes() {
        let prev = LatentState::new(DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 3.0, -0.0]));
        let hat = LatentState::new(DMatrix::from_row_slice(2, 2, &[5.0, 6.0, -7.0, 8.0]));
        let keep = gated_update(&GateValues::constant(2, 2, 0.0), &hat, &prev).unwrap();
        assert_eq!(keep.tokens, prev.tokens);
        let replace = gated_update(&GateValues::constant(2, 2, 1.0), &hat, &prev).unwrap();
        assert_eq!(replace.tokens, hat.tokens);
        let mean = gated_update(&GateValues::constant(2, 2, 0.5), &hat, &prev).unwrap();
        assert_eq!(mean.tokens, DMatrix::from_row_slice(2, 2, &[3.0, 2.0, -2.0, 4.0]));
    }

    #[test]
    fn decode_preserves_shapes() {
        let cfg = ModelConfig::default();
        let model = ToyPredictor::new(cfg).unwrap();
        let tokens = model.encode(&textured_image(&cfg, 0.3)).unwrap();
        let (m, z, f) = model.decode(&model.reset(), &model.initial_pose_token(), &tokens).unwrap();
        assert_eq!(m.tokens.shape(), (cfg.state_tokens, cfg.dim));
        assert_eq!(z.0.shape(), (1, cfg.dim));
        assert_eq!(f.0.shape(), (cfg.tokens(), cfg.dim));
    }

    #[test]
    fn heads_respect_contracts() {
        let cfg = ModelConfig::default();
        let model = ToyPredictor::new(cfg).unwrap();
        let (_, pred) = model.step_image(&model.reset(), &textured_image(&cfg, 0.7)).unwrap();
        assert!(pred.c_self.values().iter().all(|c| *c > 1.0));
        assert!(pred.c_world.values().iter().all(|c| *c > 1.0));
        assert!((pred.pose.rotation.norm() - 1.0).abs() < 1e-12);
        assert_eq!(pred.x_self.shape(), (cfg.height, cfg.width));
        assert_eq!(pred.x_world.shape(), (cfg.height, cfg.width));
        pred.validate().unwrap();
    }

    #[test]
    fn step_changes_state_unless_update_is_zero() {
        let cfg = ModelConfig::default();
        let image = textured_image(&cfg, 0.1);
        let model = ToyPredictor::new(cfg).unwrap();
        let s0 = model.reset();
        let (s1, _) = model.step_image(&s0, &image).unwrap();
        assert_ne!(s1.tokens, s0.tokens);
        let frozen = model.clone().with_gate_override(GateOverride { reset: None, update: Some(0.0) });
        let (s1, _) = frozen.step_image(&s0, &image).unwrap();
        assert_eq!(s1.tokens, s0.tokens);
    }
}
