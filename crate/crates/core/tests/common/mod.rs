//! Central finite-difference gradient checking shared by the test targets.
#![allow(dead_code)]

use catwig::models::{BasicBlock, ModelGraph};
use catwig::nn::{
    softmax_cross_entropy, BatchNorm2d, Conv2d, Dropout, Flatten, ForwardCtx, GlobalAvgPool, Linear, MaxPool2, Mode, Param, Relu, Result, Tensor4,
};
use catwig::rng::SeededRng;

/// Finite-difference steps. Central differences at `h` and `h/2` are
/// combined by Richardson extrapolation, cancelling the `h²` error term.
/// Batch norm over small batches is strongly curved, so it gets the larger
/// step; piecewise-linear networks get a small one to avoid straddling kinks.
pub const STEP_CURVED: f64 = 1e-5;
pub const STEP_PIECEWISE: f64 = 1e-6;
/// Denominator floor for the relative error, so exact zeros compare by
/// absolute difference.
pub const REL_FLOOR: f64 = 1e-3;
pub const MAX_REL_ERR: f64 = 1e-5;

/// Anything with a forward pass, a backward pass and parameters.
pub trait Differentiable {
    fn fwd(&mut self, x: &Tensor4<f64>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor4<f64>>;
    fn bwd(&mut self, g: &Tensor4<f64>) -> Result<Tensor4<f64>>;
    fn params(&mut self) -> Vec<&mut Param<f64>>;
}

macro_rules! with_ctx {
    ($t:ty) => {
        impl Differentiable for $t {
            fn fwd(&mut self, x: &Tensor4<f64>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor4<f64>> {
                self.forward(x, ctx)
            }
            fn bwd(&mut self, g: &Tensor4<f64>) -> Result<Tensor4<f64>> {
                self.backward(g)
            }
            fn params(&mut self) -> Vec<&mut Param<f64>> {
                let mut out = Vec::new();
                self.collect_params("", &mut out);
                out.into_iter().map(|(_, p)| p).collect()
            }
        }
    };
}

macro_rules! without_ctx {
    ($t:ty) => {
        impl Differentiable for $t {
            fn fwd(&mut self, x: &Tensor4<f64>, _ctx: &mut ForwardCtx<'_>) -> Result<Tensor4<f64>> {
                self.forward(x)
            }
            fn bwd(&mut self, g: &Tensor4<f64>) -> Result<Tensor4<f64>> {
                self.backward(g)
            }
            fn params(&mut self) -> Vec<&mut Param<f64>> {
                Vec::new()
            }
        }
    };
}

with_ctx!(Conv2d<f64>);
with_ctx!(BatchNorm2d<f64>);
with_ctx!(BasicBlock<f64>);
without_ctx!(Relu<f64>);
without_ctx!(MaxPool2);
without_ctx!(GlobalAvgPool);
without_ctx!(Flatten);

impl Differentiable for Linear<f64> {
    fn fwd(&mut self, x: &Tensor4<f64>, _ctx: &mut ForwardCtx<'_>) -> Result<Tensor4<f64>> {
        self.forward(x)
    }
    fn bwd(&mut self, g: &Tensor4<f64>) -> Result<Tensor4<f64>> {
        self.backward(g)
    }
    fn params(&mut self) -> Vec<&mut Param<f64>> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out.into_iter().map(|(_, p)| p).collect()
    }
}

impl Differentiable for Dropout<f64> {
    fn fwd(&mut self, x: &Tensor4<f64>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor4<f64>> {
        self.forward(x, ctx)
    }
    fn bwd(&mut self, g: &Tensor4<f64>) -> Result<Tensor4<f64>> {
        self.backward(g)
    }
    fn params(&mut self) -> Vec<&mut Param<f64>> {
        Vec::new()
    }
}

impl Differentiable for ModelGraph<f64> {
    fn fwd(&mut self, x: &Tensor4<f64>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor4<f64>> {
        self.forward(x, ctx)
    }
    fn bwd(&mut self, g: &Tensor4<f64>) -> Result<Tensor4<f64>> {
        self.backward(g)
    }
    fn params(&mut self) -> Vec<&mut Param<f64>> {
        self.params_mut().into_iter().map(|(_, p)| p).collect()
    }
}

/// Scalar objective put on top of the checked function.
pub enum Head {
    /// `Σ r ⊙ y` with fixed random weights `r`.
    Projection,
    /// Mean softmax cross-entropy against these targets.
    CrossEntropy(Vec<usize>),
}

pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: String,
}

pub fn random_tensor(dims: [usize; 4], rng: &mut SeededRng) -> Tensor4<f64> {
    Tensor4::from_fn(dims, |_| rng.uniform(-1.0, 1.0))
}

/// Inputs bounded away from zero, so ReLU kinks are not straddled.
pub fn random_tensor_off_zero(dims: [usize; 4], rng: &mut SeededRng) -> Tensor4<f64> {
    Tensor4::from_fn(dims, |_| {
        let v = rng.uniform(0.05, 1.0);
        if rng.next_u64() & 1 == 0 {
            v
        } else {
            -v
        }
    })
}

fn sample_indices(len: usize, max: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    if len > max {
        rng.shuffle(&mut idx);
        idx.truncate(max);
    }
    idx
}

fn objective<N: Differentiable>(net: &mut N, x: &Tensor4<f64>, head: &Head, r: &[f64], mode: Mode, ctx_seed: u64) -> (f64, Tensor4<f64>) {
    let mut rng = SeededRng::new(ctx_seed);
    let y = net.fwd(x, &mut ForwardCtx::new(mode, &mut rng)).expect("forward");
    match head {
        Head::Projection => {
            let l = y.data().iter().zip(r).map(|(a, b)| a * b).sum();
            let g = Tensor4::from_vec(y.dims(), r.to_vec()).unwrap();
            (l, g)
        }
        Head::CrossEntropy(t) => softmax_cross_entropy(&y, t).expect("loss"),
    }
}

fn richardson(step: f64, mut central: impl FnMut(f64) -> f64) -> f64 {
    let coarse = central(step);
    let fine = central(step / 2.0);
    (4.0 * fine - coarse) / 3.0
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Compares analytic input and parameter gradients of `net` against
/// central differences, checking at most `max_per_tensor` entries of the
/// input and of each parameter.
#[allow(clippy::too_many_arguments)]
pub fn grad_check<N: Differentiable>(net: &mut N, x: &Tensor4<f64>, head: Head, mode: Mode, seed: u64, max_per_tensor: usize, step: f64) -> GradReport {
    let mut rng = SeededRng::new(seed ^ 0x9e37);
    let ctx_seed = seed.wrapping_add(17);
    let out_len = {
        let mut r0 = SeededRng::new(ctx_seed);
        net.fwd(x, &mut ForwardCtx::new(mode, &mut r0)).expect("forward").len()
    };
    let r: Vec<f64> = (0..out_len).map(|_| rng.uniform(-1.0, 1.0)).collect();

    for p in net.params() {
        p.zero_grad();
    }
    let (_, g) = objective(net, x, &head, &r, mode, ctx_seed);
    let gx = net.bwd(&g).expect("backward");
    let grads: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.clone()).collect();

    let mut report = GradReport { max_rel_err: 0.0, checked: 0, worst: String::new() };
    let mut record = |what: String, a: f64, n: f64| {
        let e = rel_err(a, n);
        report.checked += 1;
        if e > report.max_rel_err {
            report.max_rel_err = e;
            report.worst = format!("{what}: analytic {a:e}, numeric {n:e}");
        }
    };

    for i in sample_indices(x.len(), max_per_tensor, &mut rng) {
        let numeric = richardson(step, |h| {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let lp = objective(net, &xp, &head, &r, mode, ctx_seed).0;
            xp.data_mut()[i] = x.data()[i] - h;
            let lm = objective(net, &xp, &head, &r, mode, ctx_seed).0;
            (lp - lm) / (2.0 * h)
        });
        record(format!("input[{i}]"), gx.data()[i], numeric);
    }
    for (pi, grad) in grads.iter().enumerate() {
        for j in sample_indices(grad.len(), max_per_tensor, &mut rng) {
            let orig = net.params()[pi].value[j];
            let numeric = richardson(step, |h| {
                net.params()[pi].value[j] = orig + h;
                let lp = objective(net, x, &head, &r, mode, ctx_seed).0;
                net.params()[pi].value[j] = orig - h;
                let lm = objective(net, x, &head, &r, mode, ctx_seed).0;
                net.params()[pi].value[j] = orig;
                (lp - lm) / (2.0 * h)
            });
            record(format!("param{pi}[{j}]"), grad[j], numeric);
        }
    }
    report
}
