//! A small multimodal mixture-of-experts network with hand-written
//! backpropagation.
//!
//! Each modality is encoded by its own affine map, optionally scaled by a
//! per-instance modality weight, and then routed independently through every
//! MoE layer by its own router into a shared pool of experts. Each layer keeps
//! the top-k experts per modality token, mixes their outputs with a softmax over
//! the selected router logits, and adds the result back onto the token. The
//! tokens are mean-pooled and a linear head produces either a scalar
//! (regression) or class probabilities (classification).

mod backward;
mod checkpoint;
mod forward;
mod train;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Matrix;

pub use backward::backward;
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use forward::{forward, forward_modalities, predict, unimodal_forward, ForwardTrace};
pub use train::{grad_check, grad_check_indices, loss_and_grad, sgd_step, LossTargets};

/// What the head predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification { n_classes: usize },
}

impl Task {
    pub fn output_dim(&self) -> usize {
        match self {
            Task::Regression => 1,
            Task::Classification { n_classes } => *n_classes,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Regression => write!(f, "regression"),
            Task::Classification { n_classes } => write!(f, "classification:{n_classes}"),
        }
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "regression" => Ok(Task::Regression),
            other => {
                let n = other
                    .strip_prefix("classification:")
                    .ok_or_else(|| format!("expected `regression` or `classification:<C>`, got `{other}`"))?;
                let n_classes: usize = n.parse().map_err(|_| format!("bad class count `{n}`"))?;
                if n_classes < 2 {
                    return Err(format!("classification needs at least 2 classes, got {n_classes}"));
                }
                Ok(Task::Classification { n_classes })
            }
        }
    }
}

/// How modality tokens are combined after the MoE layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    #[default]
    Mean,
    Sum,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::Sum => "sum",
        })
    }
}

impl FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "mean" => Ok(Pooling::Mean),
            "sum" => Ok(Pooling::Sum),
            other => Err(format!("unknown pooling `{other}` (expected mean or sum)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoeConfig {
    pub input_dims: Vec<usize>,
    pub embed_dim: usize,
    pub n_experts: usize,
    pub top_k: usize,
    pub expert_hidden: usize,
    pub n_moe_layers: usize,
    pub task: Task,
    pub pooling: Pooling,
}

impl MoeConfig {
    /// Desk-scale defaults: 4 experts, top-2, 32-wide embeddings, 64-wide
    /// expert hidden layer, one MoE layer.
    pub fn desk_scale(input_dims: Vec<usize>, task: Task) -> Self {
        Self {
            input_dims,
            embed_dim: 32,
            n_experts: 4,
            top_k: 2,
            expert_hidden: 64,
            n_moe_layers: 1,
            task,
            pooling: Pooling::Mean,
        }
    }

    pub fn n_modalities(&self) -> usize {
        self.input_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidInput(format!("moe config: {msg}")));
        if self.input_dims.is_empty() || self.input_dims.contains(&0) {
            return fail(format!(
                "input dims must be non-empty and positive, got {:?}",
                self.input_dims
            ));
        }
        if self.embed_dim == 0 || self.expert_hidden == 0 {
            return fail("embed_dim and expert_hidden must be at least 1".into());
        }
        if self.n_moe_layers == 0 {
            return fail("n_moe_layers must be at least 1".into());
        }
        if self.top_k == 0 || self.top_k > self.n_experts {
            return fail(format!(
                "top_k must be in [1, n_experts={}], got {}",
                self.n_experts, self.top_k
            ));
        }
        if let Task::Classification { n_classes } = self.task {
            if n_classes < 2 {
                return fail("classification needs at least 2 classes".into());
            }
        }
        Ok(())
    }

    /// `key=value` lines, the form stored in checkpoints.
    pub fn to_kv_text(&self) -> String {
        let dims: Vec<String> = self.input_dims.iter().map(usize::to_string).collect();
        format!(
            "input_dims={}\nembed_dim={}\nn_experts={}\ntop_k={}\nexpert_hidden={}\nn_moe_layers={}\ntask={}\npooling={}\n",
            dims.join(","),
            self.embed_dim,
            self.n_experts,
            self.top_k,
            self.expert_hidden,
            self.n_moe_layers,
            self.task,
            self.pooling
        )
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = MoeConfig::desk_scale(vec![], Task::Regression);
        let bad = |key: &str, msg: String| Error::InvalidInput(format!("moe config `{key}`: {msg}"));
        let count = |key: &str, v: &str| v.trim().parse::<usize>().map_err(|e| bad(key, e.to_string()));
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(line, "expected key=value".into()))?;
            match key.trim() {
                "input_dims" => cfg.input_dims = value.split(',').map(|d| count(key, d)).collect::<Result<Vec<_>>>()?,
                "embed_dim" => cfg.embed_dim = count(key, value)?,
                "n_experts" => cfg.n_experts = count(key, value)?,
                "top_k" => cfg.top_k = count(key, value)?,
                "expert_hidden" => cfg.expert_hidden = count(key, value)?,
                "n_moe_layers" => cfg.n_moe_layers = count(key, value)?,
                "task" => cfg.task = value.parse().map_err(|e| bad(key, e))?,
                "pooling" => cfg.pooling = value.parse().map_err(|e| bad(key, e))?,
                other => return Err(bad(other, "unknown key".into())),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `y = W x + b` with `W` stored row-major as `n_out × n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    n_in: usize,
    n_out: usize,
}

impl Affine {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            weight: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
            n_in,
            n_out,
        }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    fn init<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let a = (6.0 / (n_in + n_out) as f64).sqrt();
        let weight = (0..n_in * n_out).map(|_| rng.random_range(-a..a)).collect();
        Self {
            weight,
            bias: vec![0.0; n_out],
            n_in,
            n_out,
        }
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub(crate) fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n_in);
        self.weight
            .chunks_exact(self.n_in)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx` when
    /// `want_input` is set.
    pub(crate) fn backprop(&self, x: &[f64], dy: &[f64], grad: &mut Affine, want_input: bool) -> Vec<f64> {
        let mut dx = if want_input { vec![0.0; self.n_in] } else { Vec::new() };
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let grow = &mut grad.weight[o * self.n_in..(o + 1) * self.n_in];
            for (gw, v) in grow.iter_mut().zip(x) {
                *gw += g * v;
            }
            if want_input {
                let wrow = &self.weight[o * self.n_in..(o + 1) * self.n_in];
                for (d, w) in dx.iter_mut().zip(wrow) {
                    *d += g * w;
                }
            }
        }
        dx
    }
}

/// Two-layer feed-forward expert `down(gelu(up(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    pub up: Affine,
    pub down: Affine,
}

/// Every trainable tensor of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors {
    /// `[modality]`, input_dim → embed_dim.
    pub encoders: Vec<Affine>,
    /// `[layer][modality]`, embed_dim → n_experts.
    pub routers: Vec<Vec<Affine>>,
    /// `[layer][expert]`.
    pub experts: Vec<Vec<Expert>>,
    /// embed_dim → 1 or C.
    pub head: Affine,
}

impl Tensors {
    fn build(config: &MoeConfig, mut make: impl FnMut(usize, usize) -> Affine) -> Self {
        let d = config.embed_dim;
        let encoders = config.input_dims.iter().map(|&n| make(n, d)).collect();
        let mut routers = Vec::with_capacity(config.n_moe_layers);
        let mut experts = Vec::with_capacity(config.n_moe_layers);
        for _ in 0..config.n_moe_layers {
            routers.push((0..config.n_modalities()).map(|_| make(d, config.n_experts)).collect());
            experts.push(
                (0..config.n_experts)
                    .map(|_| Expert {
                        up: make(d, config.expert_hidden),
                        down: make(config.expert_hidden, d),
                    })
                    .collect(),
            );
        }
        let head = make(d, config.task.output_dim());
        Self {
            encoders,
            routers,
            experts,
            head,
        }
    }

    fn affines(&self) -> Vec<(String, &Affine)> {
        let mut out = Vec::new();
        for (m, a) in self.encoders.iter().enumerate() {
            out.push((format!("encoder[{m}]"), a));
        }
        for (l, (routers, experts)) in self.routers.iter().zip(&self.experts).enumerate() {
            for (m, a) in routers.iter().enumerate() {
                out.push((format!("router[{l}][{m}]"), a));
            }
            for (e, ex) in experts.iter().enumerate() {
                out.push((format!("expert[{l}][{e}].up"), &ex.up));
                out.push((format!("expert[{l}][{e}].down"), &ex.down));
            }
        }
        out.push(("head".into(), &self.head));
        out
    }

    fn affines_mut(&mut self) -> Vec<&mut Affine> {
        let mut out: Vec<&mut Affine> = self.encoders.iter_mut().collect();
        for (routers, experts) in self.routers.iter_mut().zip(self.experts.iter_mut()) {
            out.extend(routers.iter_mut());
            for ex in experts.iter_mut() {
                out.push(&mut ex.up);
                out.push(&mut ex.down);
            }
        }
        out.push(&mut self.head);
        out
    }

    /// Parameter slices in declaration order: for each affine map its weight
    /// then its bias.
    pub fn slices(&self) -> Vec<&[f64]> {
        self.affines()
            .into_iter()
            .flat_map(|(_, a)| [a.weight.as_slice(), a.bias.as_slice()])
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.affines_mut()
            .into_iter()
            .flat_map(|a| [a.weight.as_mut_slice(), a.bias.as_mut_slice()])
            .collect()
    }

    /// `(name, shape)` of every slice returned by [`Tensors::slices`].
    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.affines()
            .into_iter()
            .flat_map(|(name, a)| {
                [
                    (format!("{name}.weight"), vec![a.n_out, a.n_in]),
                    (format!("{name}.bias"), vec![a.n_out]),
                ]
            })
            .collect()
    }

    /// Flat-index ranges of each named slice.
    pub fn ranges(&self) -> Vec<(String, Range<usize>)> {
        let mut start = 0;
        self.shapes()
            .into_iter()
            .map(|(name, shape)| {
                let len: usize = shape.iter().product();
                let r = start..start + len;
                start += len;
                (name, r)
            })
            .collect()
    }

    pub fn n_scalars(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn get_flat(&self, index: usize) -> Option<f64> {
        let mut i = index;
        for s in self.slices() {
            if i < s.len() {
                return Some(s[i]);
            }
            i -= s.len();
        }
        None
    }

    pub fn set_flat(&mut self, index: usize, value: f64) -> Result<()> {
        let total = self.n_scalars();
        let mut i = index;
        for s in self.slices_mut() {
            if i < s.len() {
                s[i] = value;
                return Ok(());
            }
            i -= s.len();
        }
        Err(Error::Range {
            what: "model parameters",
            index,
            len: total,
        })
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| *v == 0.0))
    }
}

/// Model parameters plus the configuration that shapes them.
///
/// `generation` increments on every update so that a [`ForwardTrace`] taken
/// before an update is rejected by [`backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: MoeConfig,
    tensors: Tensors,
    generation: u64,
}

impl ModelParams {
    /// Seeded initialization; draws happen in declaration order.
    pub fn init(config: MoeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed);
        let tensors = Tensors::build(&config, |n_in, n_out| Affine::init(n_in, n_out, &mut rng));
        Ok(Self {
            config,
            tensors,
            generation: 0,
        })
    }

    pub fn zeros(config: MoeConfig) -> Result<Self> {
        config.validate()?;
        let tensors = Tensors::build(&config, Affine::zeros);
        Ok(Self {
            config,
            tensors,
            generation: 0,
        })
    }

    pub(crate) fn from_parts(config: MoeConfig, tensors: Tensors) -> Self {
        Self {
            config,
            tensors,
            generation: 0,
        }
    }

    pub fn config(&self) -> &MoeConfig {
        &self.config
    }

    pub fn tensors(&self) -> &Tensors {
        &self.tensors
    }

    /// Mutable access; counts as an update.
    pub fn tensors_mut(&mut self) -> &mut Tensors {
        self.generation += 1;
        &mut self.tensors
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Gradients with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub tensors: Tensors,
}

impl ParamGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            tensors: Tensors::build(&params.config, Affine::zeros),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.is_zero()
    }
}

/// Per-modality feature matrices for a set of instances.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBatch {
    features: Vec<Matrix>,
}

impl DataBatch {
    pub fn new(features: Vec<Matrix>) -> Result<Self> {
        let n = features.first().map_or(0, Matrix::rows);
        if features.iter().any(|f| f.rows() != n) {
            return Err(Error::Shape(
                "modality feature matrices disagree on instance count".into(),
            ));
        }
        Ok(Self { features })
    }

    pub fn n_instances(&self) -> usize {
        self.features.first().map_or(0, Matrix::rows)
    }

    pub fn n_modalities(&self) -> usize {
        self.features.len()
    }

    pub fn modality(&self, m: usize) -> &Matrix {
        &self.features[m]
    }

    pub fn modality_mut(&mut self, m: usize) -> &mut Matrix {
        &mut self.features[m]
    }

    pub fn gather(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.iter().map(|f| f.gather_rows(indices)).collect(),
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
