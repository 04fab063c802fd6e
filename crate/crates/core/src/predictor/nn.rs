//! Minimal dense layers over token matrices (one token per row).

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Standard deviation of the seeded weight initialization.
pub const INIT_SCALE: f64 = 0.02;

pub(crate) fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    let normal = Normal::new(0.0, scale).expect("valid normal");
    DMatrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

/// Receives every parameter tensor with a dotted path name.
pub trait ParamVisitor {
    fn visit(&mut self, name: &str, tensor: &DMatrix<f64>);
}

/// Mutable counterpart of [`ParamVisitor`].
pub trait ParamVisitorMut {
    fn visit(&mut self, name: &str, tensor: &mut DMatrix<f64>);
}

/// Types that own named parameter tensors.
pub trait Module {
    fn visit_params(&self, prefix: &str, v: &mut dyn ParamVisitor);
    fn visit_params_mut(&mut self, prefix: &str, v: &mut dyn ParamVisitorMut);
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// `y = x W^T + b` applied row-wise. Bias is stored as a `1 x out` row.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: DMatrix<f64>,
    pub bias: DMatrix<f64>,
}

impl Linear {
    pub fn new<R: Rng>(rng: &mut R, input: usize, output: usize) -> Self {
        Self { weight: random_matrix(rng, output, input, INIT_SCALE), bias: DMatrix::zeros(1, output) }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * self.weight.transpose();
        for mut row in y.row_iter_mut() {
            row += &self.bias;
        }
        y
    }
}

impl Module for Linear {
    fn visit_params(&self, prefix: &str, v: &mut dyn ParamVisitor) {
        v.visit(&join(prefix, "weight"), &self.weight);
        v.visit(&join(prefix, "bias"), &self.bias);
    }
    fn visit_params_mut(&mut self, prefix: &str, v: &mut dyn ParamVisitorMut) {
        v.visit(&join(prefix, "weight"), &mut self.weight);
        v.visit(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Per-token layer normalization with learned gain and offset.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: DMatrix<f64>,
    pub offset: DMatrix<f64>,
}

impl LayerNorm {
    const EPS: f64 = 1e-6;

    pub fn new(dim: usize) -> Self {
        Self { gain: DMatrix::from_element(1, dim, 1.0), offset: DMatrix::zeros(1, dim) }
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x.clone();
        let d = x.ncols() as f64;
        for mut row in y.row_iter_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let inv = 1.0 / (var + Self::EPS).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * self.gain[j] + self.offset[j];
            }
        }
        y
    }
}

impl Module for LayerNorm {
    fn visit_params(&self, prefix: &str, v: &mut dyn ParamVisitor) {
        v.visit(&join(prefix, "gain"), &self.gain);
        v.visit(&join(prefix, "offset"), &self.offset);
    }
    fn visit_params_mut(&mut self, prefix: &str, v: &mut dyn ParamVisitorMut) {
        v.visit(&join(prefix, "gain"), &mut self.gain);
        v.visit(&join(prefix, "offset"), &mut self.offset);
    }
}

/// Multi-head scaled dot-product attention. Queries come from one token
/// set, keys and values from another (the same set for self-attention).
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl Attention {
    pub fn new<R: Rng>(rng: &mut R, dim: usize, heads: usize) -> Self {
        Self {
            heads,
            query: Linear::new(rng, dim, dim),
            key: Linear::new(rng, dim, dim),
            value: Linear::new(rng, dim, dim),
            output: Linear::new(rng, dim, dim),
        }
    }

    pub fn forward(&self, queries: &DMatrix<f64>, context: &DMatrix<f64>) -> DMatrix<f64> {
        let q = self.query.forward(queries);
        let k = self.key.forward(context);
        let v = self.value.forward(context);
        let dim = q.ncols();
        let head_dim = dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut mixed = DMatrix::zeros(q.nrows(), dim);
        for h in 0..self.heads {
            let cols = h * head_dim;
            let qh = q.columns(cols, head_dim);
            let kh = k.columns(cols, head_dim);
            let vh = v.columns(cols, head_dim);
            let mut scores = qh * kh.transpose() * scale;
            softmax_rows(&mut scores);
            mixed.columns_mut(cols, head_dim).copy_from(&(scores * vh));
        }
        self.output.forward(&mixed)
    }
}

impl Module for Attention {
    fn visit_params(&self, prefix: &str, v: &mut dyn ParamVisitor) {
        self.query.visit_params(&join(prefix, "query"), v);
        self.key.visit_params(&join(prefix, "key"), v);
        self.value.visit_params(&join(prefix, "value"), v);
        self.output.visit_params(&join(prefix, "output"), v);
    }
    fn visit_params_mut(&mut self, prefix: &str, v: &mut dyn ParamVisitorMut) {
        self.query.visit_params_mut(&join(prefix, "query"), v);
        self.key.visit_params_mut(&join(prefix, "key"), v);
        self.value.visit_params_mut(&join(prefix, "value"), v);
        self.output.visit_params_mut(&join(prefix, "output"), v);
    }
}

/// Two-layer perceptron with a GELU between the layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new<R: Rng>(rng: &mut R, input: usize, hidden: usize, output: usize) -> Self {
        Self { hidden: Linear::new(rng, input, hidden), out: Linear::new(rng, hidden, output) }
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let h = self.hidden.forward(x).map(gelu);
        self.out.forward(&h)
    }
}

impl Module for Mlp {
    fn visit_params(&self, prefix: &str, v: &mut dyn ParamVisitor) {
        self.hidden.visit_params(&join(prefix, "hidden"), v);
        self.out.visit_params(&join(prefix, "out"), v);
    }
    fn visit_params_mut(&mut self, prefix: &str, v: &mut dyn ParamVisitorMut) {
        self.hidden.visit_params_mut(&join(prefix, "hidden"), v);
        self.out.visit_params_mut(&join(prefix, "out"), v);
    }
}

pub(crate) fn prefixed(prefix: &str, name: &str) -> String {
    join(prefix, name)
}

fn softmax_rows(m: &mut DMatrix<f64>) {
    for mut row in m.row_iter_mut() {
        let max = row.max();
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row /= sum;
    }
}

pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

/// Logistic function that never rounds to exactly 0 or 1.
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 { 1.0 / (1.0 + (-x).exp()) } else { let e = x.exp(); e / (1.0 + e) };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Fixed 1D sinusoidal encoding, one row per position.
pub fn sinusoidal_encoding(positions: usize, dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(positions, dim, |n, j| {
        let i = (j / 2) as f64;
        let angle = n as f64 / 10000f64.powf(2.0 * i / dim as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}
