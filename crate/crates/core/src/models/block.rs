use crate::nn::{BatchNorm2d, Buffer, Conv2d, ConvGeometry, ForwardCtx, Param, Relu, Result, Scalar, Tensor4};
use crate::rng::SeededRng;

/// 1×1 strided projection used when a block changes resolution or width.
#[derive(Debug, Clone)]
pub struct Projection<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

/// Basic residual block: `ReLU(F(x) + shortcut(x))` with
/// `F = BN ∘ conv3×3 ∘ ReLU ∘ BN ∘ conv3×3`.
#[derive(Debug, Clone)]
pub struct BasicBlock<T> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    relu1: Relu<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub projection: Option<Projection<T>>,
    relu_out: Relu<T>,
}

impl<T: Scalar> BasicBlock<T> {
    pub fn new(in_channels: usize, out_channels: usize, stride: usize, rng: &mut SeededRng) -> Self {
        let conv1 = Conv2d::new(
            ConvGeometry { in_channels, out_channels, kernel: 3, stride, padding: 1 },
            false,
            rng,
        );
        let conv2 = Conv2d::new(
            ConvGeometry { in_channels: out_channels, out_channels, kernel: 3, stride: 1, padding: 1 },
            false,
            rng,
        );
        let projection = (stride != 1 || in_channels != out_channels).then(|| Projection {
            conv: Conv2d::new(ConvGeometry { in_channels, out_channels, kernel: 1, stride, padding: 0 }, false, rng),
            bn: BatchNorm2d::new(out_channels),
        });
        BasicBlock {
            conv1,
            bn1: BatchNorm2d::new(out_channels),
            relu1: Relu::new(),
            conv2,
            bn2: BatchNorm2d::new(out_channels),
            projection,
            relu_out: Relu::new(),
        }
    }

    /// The residual function `F(x)` alone.
    pub fn residual_branch(&mut self, x: &Tensor4<T>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor4<T>> {
        let h = self.conv1.forward(x, ctx)?;
        let h = self.bn1.forward(&h, ctx)?;
        let h = self.relu1.forward(&h)?;
        let h = self.conv2.forward(&h, ctx)?;
        self.bn2.forward(&h, ctx)
    }

    pub fn shortcut_branch(&mut self, x: &Tensor4<T>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor4<T>> {
        match &mut self.projection {
            Some(p) => {
                let s = p.conv.forward(x, ctx)?;
                p.bn.forward(&s, ctx)
            }
            None => Ok(x.clone()),
        }
    }

    /// `F(x) + shortcut(x)`, before the closing ReLU.
    pub fn forward_pre_activation(&mut self, x: &Tensor4<T>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor4<T>> {
        let f = self.residual_branch(x, ctx)?;
        let s = self.shortcut_branch(x, ctx)?;
        f.add(&s)
    }

    pub fn forward(&mut self, x: &Tensor4<T>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor4<T>> {
        let pre = self.forward_pre_activation(x, ctx)?;
        self.relu_out.forward(&pre)
    }

    pub fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let g = self.relu_out.backward(grad_out)?;
        let gf = self.bn2.backward(&g)?;
        let gf = self.conv2.backward(&gf)?;
        let gf = self.relu1.backward(&gf)?;
        let gf = self.bn1.backward(&gf)?;
        let gx = self.conv1.backward(&gf)?;
        let gs = match &mut self.projection {
            Some(p) => {
                let gs = p.bn.backward(&g)?;
                p.conv.backward(&gs)?
            }
            None => g,
        };
        gx.add(&gs)
    }

    pub fn output_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mid = self.conv1.output_dims(input)?;
        self.conv2.output_dims(mid)
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count()
            + self.bn1.param_count()
            + self.conv2.param_count()
            + self.bn2.param_count()
            + self.projection.as_ref().map_or(0, |p| p.conv.param_count() + p.bn.param_count())
    }

    pub fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        self.conv1.collect_params(&format!("{prefix}.conv1"), out);
        self.bn1.collect_params(&format!("{prefix}.bn1"), out);
        self.conv2.collect_params(&format!("{prefix}.conv2"), out);
        self.bn2.collect_params(&format!("{prefix}.bn2"), out);
        if let Some(p) = &mut self.projection {
            p.conv.collect_params(&format!("{prefix}.proj"), out);
            p.bn.collect_params(&format!("{prefix}.proj_bn"), out);
        }
    }

    pub fn collect_buffers<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Buffer<T>)>) {
        self.bn1.collect_buffers(&format!("{prefix}.bn1"), out);
        self.bn2.collect_buffers(&format!("{prefix}.bn2"), out);
        if let Some(p) = &mut self.projection {
            p.bn.collect_buffers(&format!("{prefix}.proj_bn"), out);
        }
    }

    pub fn clear_cache(&mut self) {
        self.conv1.clear_cache();
        self.bn1.clear_cache();
        self.relu1.clear_cache();
        self.conv2.clear_cache();
        self.bn2.clear_cache();
        self.relu_out.clear_cache();
        if let Some(p) = &mut self.projection {
            p.conv.clear_cache();
            p.bn.clear_cache();
        }
    }
}
