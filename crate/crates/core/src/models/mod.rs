//! LeNet-style and ResNet-style classifiers over 4-channel Wigner images.

mod audit;
mod block;

pub use audit::{audit_params, AuditReport, AuditRow, RowKind, TableMatch, TABLE1_ROWS};
pub use block::{BasicBlock, Projection};

use std::fmt;
use std::str::FromStr;

use crate::nn::{
    Adam, AdamState, BatchNorm2d, Buffer, Checkpoint, Conv2d, ConvGeometry, Dropout, Flatten, ForwardCtx, GlobalAvgPool, Linear, MaxPool2,
    NnError, Param, Relu, Result, Scalar, Tensor4,
};
use crate::qstate::ClassId;
use crate::rng::SeededRng;

pub const INPUT_CHANNELS: usize = 4;
pub const CLASS_COUNT: usize = ClassId::COUNT;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    LeNet,
    ResNet,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LeNet => "lenet",
            ModelKind::ResNet => "resnet",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lenet" => Ok(ModelKind::LeNet),
            "resnet" => Ok(ModelKind::ResNet),
            other => Err(format!("unknown model `{other}` (expected lenet or resnet)")),
        }
    }
}

/// Input resolution and channel-width scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthConfig {
    pub side: usize,
    pub width_mult: f64,
}

impl Default for WidthConfig {
    fn default() -> Self {
        WidthConfig { side: 128, width_mult: 1.0 }
    }
}

impl WidthConfig {
    /// Scaled width: nearest multiple of 4, at least 4.
    pub fn channels(&self, base: usize) -> usize {
        if self.width_mult == 1.0 {
            return base;
        }
        let scaled = (base as f64 * self.width_mult / 4.0).round() as usize * 4;
        scaled.max(4)
    }

    fn validate(&self, multiple: usize) -> Result<()> {
        if !(self.width_mult > 0.0 && self.width_mult <= 1.0) {
            return Err(NnError::Geometry { op: "model", detail: format!("width_mult {} outside (0, 1]", self.width_mult) });
        }
        if self.side == 0 || !self.side.is_multiple_of(multiple) {
            return Err(NnError::Geometry { op: "model", detail: format!("input side {} must be a positive multiple of {multiple}", self.side) });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum LayerNode<T> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm2d<T>),
    Relu(Relu<T>),
    MaxPool(MaxPool2),
    GlobalAvgPool(GlobalAvgPool),
    Flatten(Flatten),
    Linear(Linear<T>),
    Dropout(Dropout<T>),
    Block(Box<BasicBlock<T>>),
}

impl<T: Scalar> LayerNode<T> {
    fn forward(&mut self, x: &Tensor4<T>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor4<T>> {
        match self {
            LayerNode::Conv(l) => l.forward(x, ctx),
            LayerNode::BatchNorm(l) => l.forward(x, ctx),
            LayerNode::Relu(l) => l.forward(x),
            LayerNode::MaxPool(l) => l.forward(x),
            LayerNode::GlobalAvgPool(l) => l.forward(x),
            LayerNode::Flatten(l) => l.forward(x),
            LayerNode::Linear(l) => l.forward(x),
            LayerNode::Dropout(l) => l.forward(x, ctx),
            LayerNode::Block(l) => l.forward(x, ctx),
        }
    }

    fn backward(&mut self, g: &Tensor4<T>) -> Result<Tensor4<T>> {
        match self {
            LayerNode::Conv(l) => l.backward(g),
            LayerNode::BatchNorm(l) => l.backward(g),
            LayerNode::Relu(l) => l.backward(g),
            LayerNode::MaxPool(l) => l.backward(g),
            LayerNode::GlobalAvgPool(l) => l.backward(g),
            LayerNode::Flatten(l) => l.backward(g),
            LayerNode::Linear(l) => l.backward(g),
            LayerNode::Dropout(l) => l.backward(g),
            LayerNode::Block(l) => l.backward(g),
        }
    }

    /// Output `(C, H, W)` for an input `(C, H, W)`.
    pub fn output_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let [c, h, w] = input;
        match self {
            LayerNode::Conv(l) => l.output_dims(input),
            LayerNode::BatchNorm(l) if l.channels != c => {
                Err(NnError::Shape { op: "batchnorm2d", expected: format!("{} channels", l.channels), got: format!("{c}") })
            }
            LayerNode::BatchNorm(_) | LayerNode::Relu(_) | LayerNode::Dropout(_) => Ok(input),
            LayerNode::MaxPool(l) => l.output_dims(input),
            LayerNode::GlobalAvgPool(_) => Ok([c, 1, 1]),
            LayerNode::Flatten(_) => Ok([c * h * w, 1, 1]),
            LayerNode::Linear(l) => {
                if [c, h, w] != [l.in_features, 1, 1] {
                    return Err(NnError::Shape { op: "linear", expected: format!("({}, 1, 1)", l.in_features), got: format!("{input:?}") });
                }
                Ok([l.out_features, 1, 1])
            }
            LayerNode::Block(b) => b.output_dims(input),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            LayerNode::Conv(l) => l.param_count(),
            LayerNode::BatchNorm(l) => l.param_count(),
            LayerNode::Linear(l) => l.param_count(),
            LayerNode::Block(b) => b.param_count(),
            _ => 0,
        }
    }

    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        match self {
            LayerNode::Conv(l) => l.collect_params(prefix, out),
            LayerNode::BatchNorm(l) => l.collect_params(prefix, out),
            LayerNode::Linear(l) => l.collect_params(prefix, out),
            LayerNode::Block(b) => b.collect_params(prefix, out),
            _ => {}
        }
    }

    fn collect_buffers<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Buffer<T>)>) {
        match self {
            LayerNode::BatchNorm(l) => l.collect_buffers(prefix, out),
            LayerNode::Block(b) => b.collect_buffers(prefix, out),
            _ => {}
        }
    }

    fn clear_cache(&mut self) {
        match self {
            LayerNode::Conv(l) => l.clear_cache(),
            LayerNode::BatchNorm(l) => l.clear_cache(),
            LayerNode::Relu(l) => l.clear_cache(),
            LayerNode::MaxPool(l) => l.clear_cache(),
            LayerNode::GlobalAvgPool(l) => l.clear_cache(),
            LayerNode::Flatten(l) => l.clear_cache(),
            LayerNode::Linear(l) => l.clear_cache(),
            LayerNode::Dropout(l) => l.clear_cache(),
            LayerNode::Block(b) => b.clear_cache(),
        }
    }
}

/// Ordered list of named layers mapping `(batch, 4, side, side)` images to
/// `(batch, 4, 1, 1)` class logits.
#[derive(Debug, Clone)]
pub struct ModelGraph<T> {
    pub kind: ModelKind,
    pub config: WidthConfig,
    pub layers: Vec<(String, LayerNode<T>)>,
}

impl<T: Scalar> ModelGraph<T> {
    pub fn input_dims(&self) -> [usize; 3] {
        [INPUT_CHANNELS, self.config.side, self.config.side]
    }

    pub fn forward(&mut self, x: &Tensor4<T>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor4<T>> {
        let [_, c, h, w] = x.dims();
        if [c, h, w] != self.input_dims() {
            return Err(NnError::Shape { op: "model input", expected: format!("{:?}", self.input_dims()), got: format!("{:?}", [c, h, w]) });
        }
        let mut h = x.clone();
        for (_, layer) in &mut self.layers {
            h = layer.forward(&h, ctx)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, grad_logits: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut g = grad_logits.clone();
        for (_, layer) in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        for (name, layer) in &mut self.layers {
            layer.collect_params(name, &mut out);
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Buffer<T>)> {
        let mut out = Vec::new();
        for (name, layer) in &mut self.layers {
            layer.collect_buffers(name, &mut out);
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn clear_caches(&mut self) {
        for (_, l) in &mut self.layers {
            l.clear_cache();
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|(_, l)| l.param_count()).sum()
    }

    /// `(C, H, W)` after each top-level layer.
    pub fn shape_chain(&self) -> Result<Vec<(String, [usize; 3])>> {
        let mut dims = self.input_dims();
        let mut out = Vec::with_capacity(self.layers.len());
        for (name, l) in &self.layers {
            dims = l.output_dims(dims)?;
            out.push((name.clone(), dims));
        }
        Ok(out)
    }

    /// Finds a residual block by layer name.
    pub fn block_mut(&mut self, name: &str) -> Option<&mut BasicBlock<T>> {
        self.layers.iter_mut().find_map(|(n, l)| match l {
            LayerNode::Block(b) if n == name => Some(b.as_mut()),
            _ => None,
        })
    }

    /// Parameters and buffers as single-precision records, plus Adam state
    /// when given.
    pub fn to_checkpoint(&mut self, optimizer: Option<&Adam<T>>) -> Checkpoint {
        let mut ck = Checkpoint::default();
        let mut params = Vec::new();
        for (name, p) in self.params_mut() {
            ck.push(name.clone(), &p.shape, p.value.iter().map(|v| v.as_f64() as f32));
            params.push((name, p.shape.clone()));
        }
        for (name, b) in self.buffers_mut() {
            ck.push(name, &b.shape, b.value.iter().map(|v| v.as_f64() as f32));
        }
        if let Some(opt) = optimizer {
            ck.push("adam.t", &[1], [opt.t as f32]);
            ck.push("adam.hparams", &[4], [opt.lr, opt.beta1, opt.beta2, opt.eps].map(|v| v as f32));
            for ((name, shape), st) in params.iter().zip(&opt.states) {
                ck.push(format!("adam.m.{name}"), shape, st.m.iter().map(|v| v.as_f64() as f32));
                ck.push(format!("adam.v.{name}"), shape, st.v.iter().map(|v| v.as_f64() as f32));
            }
        }
        ck
    }

    /// Restores parameters and buffers; returns the optimizer if the
    /// checkpoint carried one. Every slot must be present with its exact shape.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<Option<Adam<T>>> {
        let mut known = std::collections::HashSet::new();
        let mut param_names = Vec::new();
        for (name, p) in self.params_mut() {
            copy_record(ck, &name, &p.shape, &mut p.value)?;
            known.insert(name.clone());
            param_names.push((name, p.shape.clone()));
        }
        for (name, b) in self.buffers_mut() {
            copy_record(ck, &name, &b.shape, &mut b.value)?;
            known.insert(name);
        }
        if let Some(r) = ck.records.iter().find(|r| !known.contains(&r.name) && !r.name.starts_with("adam.")) {
            return Err(NnError::Checkpoint(format!("record `{}` does not belong to this {} model", r.name, self.kind)));
        }
        let Some(t) = ck.get("adam.t") else {
            return Ok(None);
        };
        let hp = ck.get("adam.hparams").ok_or_else(|| NnError::Checkpoint("adam.t without adam.hparams".into()))?;
        if hp.data.len() != 4 {
            return Err(NnError::Checkpoint("adam.hparams must hold 4 values".into()));
        }
        let mut opt = Adam::new(f64::from(hp.data[0]));
        opt.beta1 = f64::from(hp.data[1]);
        opt.beta2 = f64::from(hp.data[2]);
        opt.eps = f64::from(hp.data[3]);
        opt.t = t.data.first().copied().unwrap_or(0.0) as u64;
        for (name, shape) in param_names {
            let n = shape.iter().product();
            let mut m = vec![T::zero(); n];
            let mut v = vec![T::zero(); n];
            copy_record(ck, &format!("adam.m.{name}"), &shape, &mut m)?;
            copy_record(ck, &format!("adam.v.{name}"), &shape, &mut v)?;
            opt.states.push(AdamState { m, v });
        }
        Ok(Some(opt))
    }
}

fn copy_record<T: Scalar>(ck: &Checkpoint, name: &str, shape: &[usize], dst: &mut [T]) -> Result<()> {
    let r = ck.get(name).ok_or_else(|| NnError::Checkpoint(format!("missing record `{name}`")))?;
    let dims: Vec<usize> = r.dims.iter().map(|&d| d as usize).collect();
    if dims != shape {
        return Err(NnError::Checkpoint(format!("record `{name}` has dims {dims:?}, model expects {shape:?}")));
    }
    for (d, &v) in dst.iter_mut().zip(&r.data) {
        *d = T::from_f64(f64::from(v));
    }
    Ok(())
}

fn conv<T: Scalar>(i: usize, o: usize, k: usize, stride: usize, padding: usize, bias: bool, rng: &mut SeededRng) -> LayerNode<T> {
    LayerNode::Conv(Conv2d::new(ConvGeometry { in_channels: i, out_channels: o, kernel: k, stride, padding }, bias, rng))
}

/// Four 3×3 convolutions in two pooled stages, then two hidden FC layers
/// (the first followed by dropout 0.5) and a 4-way output layer.
pub fn build_lenet<T: Scalar>(cfg: WidthConfig, rng: &mut SeededRng) -> Result<ModelGraph<T>> {
    cfg.validate(4)?;
    let [c1, c2, c3, c4] = [32, 64, 128, 256].map(|c| cfg.channels(c));
    let [f1, f2] = [512, 128].map(|c| cfg.channels(c));
    let flat = c4 * (cfg.side / 4) * (cfg.side / 4);
    let layers = vec![
        ("conv1".to_string(), conv(INPUT_CHANNELS, c1, 3, 1, 1, true, rng)),
        ("relu1".into(), LayerNode::Relu(Relu::new())),
        ("conv2".into(), conv(c1, c2, 3, 1, 1, true, rng)),
        ("relu2".into(), LayerNode::Relu(Relu::new())),
        ("pool1".into(), LayerNode::MaxPool(MaxPool2::new())),
        ("conv3".into(), conv(c2, c3, 3, 1, 1, true, rng)),
        ("relu3".into(), LayerNode::Relu(Relu::new())),
        ("conv4".into(), conv(c3, c4, 3, 1, 1, true, rng)),
        ("relu4".into(), LayerNode::Relu(Relu::new())),
        ("pool2".into(), LayerNode::MaxPool(MaxPool2::new())),
        ("flatten".into(), LayerNode::Flatten(Flatten::new())),
        ("fc1".into(), LayerNode::Linear(Linear::new(flat, f1, true, rng))),
        ("relu5".into(), LayerNode::Relu(Relu::new())),
        ("dropout".into(), LayerNode::Dropout(Dropout::new(0.5))),
        ("fc2".into(), LayerNode::Linear(Linear::new(f1, f2, true, rng))),
        ("relu6".into(), LayerNode::Relu(Relu::new())),
        ("out".into(), LayerNode::Linear(Linear::new(f2, CLASS_COUNT, true, rng))),
    ];
    let graph = ModelGraph { kind: ModelKind::LeNet, config: cfg, layers };
    graph.shape_chain()?;
    Ok(graph)
}

/// Stem conv + four groups of two basic blocks (64, 128, 256, 512
/// channels; groups 2–4 halve the resolution) + global average pool +
/// bias-free linear classifier.
pub fn build_resnet<T: Scalar>(cfg: WidthConfig, rng: &mut SeededRng) -> Result<ModelGraph<T>> {
    cfg.validate(8)?;
    let widths = [64, 128, 256, 512].map(|c| cfg.channels(c));
    let mut layers = vec![
        ("stem.conv".to_string(), conv(INPUT_CHANNELS, widths[0], 3, 1, 1, true, rng)),
        ("stem.bn".into(), LayerNode::BatchNorm(BatchNorm2d::new(widths[0]))),
        ("stem.relu".into(), LayerNode::Relu(Relu::new())),
    ];
    let mut in_c = widths[0];
    for (g, &out_c) in widths.iter().enumerate() {
        for b in 0..2 {
            let stride = if g > 0 && b == 0 { 2 } else { 1 };
            let block = BasicBlock::new(in_c, out_c, stride, rng);
            layers.push((format!("g{}.b{}", g + 1, b), LayerNode::Block(Box::new(block))));
            in_c = out_c;
        }
    }
    layers.push(("pool".into(), LayerNode::GlobalAvgPool(GlobalAvgPool::new())));
    layers.push(("flatten".into(), LayerNode::Flatten(Flatten::new())));
    layers.push(("fc".into(), LayerNode::Linear(Linear::new(in_c, CLASS_COUNT, false, rng))));
    let graph = ModelGraph { kind: ModelKind::ResNet, config: cfg, layers };
    graph.shape_chain()?;
    Ok(graph)
}

pub fn build_model<T: Scalar>(kind: ModelKind, cfg: WidthConfig, rng: &mut SeededRng) -> Result<ModelGraph<T>> {
    match kind {
        ModelKind::LeNet => build_lenet(cfg, rng),
        ModelKind::ResNet => build_resnet(cfg, rng),
    }
}
