//! Gradient-check suites shared by the `gradcheck` tests and the
//! acceptance harness.
#![allow(dead_code)]

use catwig::models::{build_lenet, build_resnet, BasicBlock, WidthConfig};
use catwig::nn::{BatchNorm2d, Conv2d, ConvGeometry, Dropout, Flatten, GlobalAvgPool, Linear, MaxPool2, Mode, Param, Relu, Tensor4};
use catwig::rng::SeededRng;

use crate::common::{grad_check, random_tensor, random_tensor_off_zero, Differentiable, Head, MAX_REL_ERR, STEP_CURVED, STEP_PIECEWISE};

pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Checked entry count and worst relative error, or the first failure.
pub type Outcome = Result<(usize, f64), String>;
pub type Suite = fn() -> Outcome;

#[derive(Default)]
struct Acc {
    checked: usize,
    worst: f64,
    failure: Option<String>,
}

impl Acc {
    #[allow(clippy::too_many_arguments)]
    fn check<N: Differentiable>(&mut self, name: &str, net: &mut N, x: &Tensor4<f64>, head: Head, mode: Mode, seed: u64, max: usize) {
        let step = if name.starts_with("batchnorm") || name.starts_with("block") || name.starts_with("resnet") { STEP_CURVED } else { STEP_PIECEWISE };
        let rep = grad_check(net, x, head, mode, seed, max, step);
        self.checked += rep.checked;
        self.worst = self.worst.max(rep.max_rel_err);
        if self.failure.is_none() {
            if rep.checked == 0 {
                self.failure = Some(format!("{name} seed {seed}: nothing checked"));
            } else if rep.max_rel_err > MAX_REL_ERR {
                self.failure = Some(format!("{name} seed {seed}: max rel err {:e} at {}", rep.max_rel_err, rep.worst));
            }
        }
    }

    fn finish(self) -> Outcome {
        match self.failure {
            Some(f) => Err(f),
            None => Ok((self.checked, self.worst)),
        }
    }
}

fn jitter(p: &mut Param<f64>, rng: &mut SeededRng, lo: f64, hi: f64) {
    p.value.iter_mut().for_each(|v| *v = rng.uniform(lo, hi));
}

pub const ALL: [(&str, Suite); 6] = [
    ("conv2d", conv2d_all_geometries),
    ("batchnorm", batchnorm_train_and_eval),
    ("activations", activations_pooling_and_reshape),
    ("linear", linear_with_and_without_bias),
    ("blocks", residual_blocks_identity_and_projection),
    ("full pipeline", full_loss_pipeline_both_models),
];

pub fn conv2d_all_geometries() -> Outcome {
    let mut acc = Acc::default();
    let geoms = [(3, 1, 1), (3, 2, 1), (1, 2, 0), (3, 1, 0), (2, 2, 0)];
    for (&seed, &(kernel, stride, padding)) in SEEDS.iter().zip(&geoms) {
        let mut rng = SeededRng::new(seed);
        let geom = ConvGeometry { in_channels: 3, out_channels: 4, kernel, stride, padding };
        let mut conv = Conv2d::<f64>::new(geom, seed % 2 == 1, &mut rng);
        if let Some(b) = &mut conv.bias {
            jitter(b, &mut rng, -0.5, 0.5);
        }
        let x = random_tensor([2, 3, 6, 6], &mut rng);
        acc.check("conv2d", &mut conv, &x, Head::Projection, Mode::Train, seed, 200);
    }
    acc.finish()
}

pub fn batchnorm_train_and_eval() -> Outcome {
    let mut acc = Acc::default();
    for seed in SEEDS {
        let mut rng = SeededRng::new(seed);
        let mut bn = BatchNorm2d::<f64>::new(3);
        jitter(&mut bn.gamma, &mut rng, 0.5, 1.5);
        jitter(&mut bn.beta, &mut rng, -0.5, 0.5);
        let x = random_tensor([3, 3, 4, 4], &mut rng);
        acc.check("batchnorm/train", &mut bn, &x, Head::Projection, Mode::Train, seed, 200);
        bn.running_var.value.iter_mut().for_each(|v| *v = rng.uniform(0.5, 2.0));
        acc.check("batchnorm/eval", &mut bn, &x, Head::Projection, Mode::Eval, seed, 200);
    }
    acc.finish()
}

pub fn activations_pooling_and_reshape() -> Outcome {
    let mut acc = Acc::default();
    for seed in SEEDS {
        let mut rng = SeededRng::new(seed);
        let x = random_tensor_off_zero([2, 3, 4, 6], &mut rng);
        acc.check("relu", &mut Relu::<f64>::new(), &x, Head::Projection, Mode::Train, seed, 200);
        acc.check("maxpool", &mut MaxPool2::new(), &x, Head::Projection, Mode::Train, seed, 200);
        acc.check("gap", &mut GlobalAvgPool::new(), &x, Head::Projection, Mode::Train, seed, 200);
        acc.check("flatten", &mut Flatten::new(), &x, Head::Projection, Mode::Train, seed, 200);
        acc.check("dropout", &mut Dropout::<f64>::new(0.5), &x, Head::Projection, Mode::Train, seed, 200);
        acc.check("dropout/eval", &mut Dropout::<f64>::new(0.5), &x, Head::Projection, Mode::Eval, seed, 200);
    }
    acc.finish()
}

pub fn linear_with_and_without_bias() -> Outcome {
    let mut acc = Acc::default();
    for seed in SEEDS {
        let mut rng = SeededRng::new(seed);
        let mut fc = Linear::<f64>::new(12, 5, seed % 2 == 0, &mut rng);
        if let Some(b) = &mut fc.bias {
            jitter(b, &mut rng, -0.5, 0.5);
        }
        let x = random_tensor([3, 12, 1, 1], &mut rng);
        acc.check("linear", &mut fc, &x, Head::Projection, Mode::Train, seed, 200);
        let targets = (0..3).map(|i| (i + seed as usize) % 5).collect();
        acc.check("linear+xent", &mut fc, &x, Head::CrossEntropy(targets), Mode::Train, seed, 200);
    }
    acc.finish()
}

pub fn residual_blocks_identity_and_projection() -> Outcome {
    let mut acc = Acc::default();
    for seed in SEEDS {
        let mut rng = SeededRng::new(seed);
        let mut ident = BasicBlock::<f64>::new(4, 4, 1, &mut rng);
        let x = random_tensor([2, 4, 6, 6], &mut rng);
        acc.check("block/identity", &mut ident, &x, Head::Projection, Mode::Train, seed, 60);
        let mut proj = BasicBlock::<f64>::new(4, 8, 2, &mut rng);
        acc.check("block/projection", &mut proj, &x, Head::Projection, Mode::Train, seed, 60);
    }
    acc.finish()
}

pub fn full_loss_pipeline_both_models() -> Outcome {
    let mut acc = Acc::default();
    for seed in SEEDS {
        let mut rng = SeededRng::new(seed);
        // side 16 keeps at least 16 values per channel in the last batch norm
        let targets: Vec<usize> = (0..4).map(|i| (i + seed as usize) % 4).collect();
        let x = random_tensor([4, 4, 16, 16], &mut rng).map(|v| 0.5 + 0.5 * v);
        let mut resnet = build_resnet::<f64>(WidthConfig { side: 16, width_mult: 0.0625 }, &mut rng).unwrap();
        acc.check("resnet+xent", &mut resnet, &x, Head::CrossEntropy(targets.clone()), Mode::Train, seed, 8);
        let mut lenet = build_lenet::<f64>(WidthConfig { side: 16, width_mult: 0.0625 }, &mut rng).unwrap();
        acc.check("lenet+xent", &mut lenet, &x, Head::CrossEntropy(targets), Mode::Train, seed, 8);
    }
    acc.finish()
}
