use rayon::prelude::*;

use super::{ensure_finite, ForwardCtx, NnError, Param, Result, Scalar, Tensor4};
use crate::rng::SeededRng;

// Samples per partial weight-gradient accumulator. Fixed so the reduction
// order does not depend on the thread count.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }
}

/// `W_out = (W_in − k + 2·padding) / stride + 1`, rounding down.
pub fn conv_output_side(input: usize, kernel: usize, padding: usize, stride: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(NnError::Geometry { op: "conv2d", detail: format!("kernel {kernel} / stride {stride} must be positive") });
    }
    let span = input + 2 * padding;
    if span < kernel {
        return Err(NnError::Geometry {
            op: "conv2d",
            detail: format!("kernel {kernel} larger than padded input {span} (input {input}, padding {padding})"),
        });
    }
    Ok((span - kernel) / stride + 1)
}

/// Input retained by a forward call for the matching backward call.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    input: Tensor4<T>,
    geom: ConvGeometry,
    out_h: usize,
    out_w: usize,
}

impl<T: Scalar> ConvCache<T> {
    pub fn output_dims(&self) -> [usize; 4] {
        [self.input.batch(), self.geom.out_channels, self.out_h, self.out_w]
    }
}

fn im2col<T: Scalar>(x: &[T], h: usize, w: usize, g: &ConvGeometry, oh: usize, ow: usize, cols: &mut [T]) {
    let k = g.kernel;
    let plane = oh * ow;
    for c in 0..g.in_channels {
        let xc = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((c * k + ki) * k + kj) * plane..][..plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let out = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let xrow = &xc[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in out.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= w as isize { T::zero() } else { xrow[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], h: usize, w: usize, g: &ConvGeometry, oh: usize, ow: usize, x: &mut [T]) {
    let k = g.kernel;
    let plane = oh * ow;
    for c in 0..g.in_channels {
        let xc = &mut x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((c * k + ki) * k + kj) * plane..][..plane];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = &mut xc[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            xrow[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation with zero padding.
///
/// `weight` is laid out `(out_c, in_c, k, k)`; `bias`, when given, has
/// `out_c` entries.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor4<T>,
    weight: &[T],
    bias: Option<&[T]>,
    geom: ConvGeometry,
) -> Result<(Tensor4<T>, ConvCache<T>)> {
    let [b, c, h, w] = x.dims();
    if c != geom.in_channels {
        return Err(NnError::Shape { op: "conv2d", expected: format!("{} input channels", geom.in_channels), got: format!("{c}") });
    }
    if weight.len() != geom.weight_len() {
        return Err(NnError::Shape { op: "conv2d", expected: format!("{} weights", geom.weight_len()), got: format!("{}", weight.len()) });
    }
    if let Some(bias) = bias {
        if bias.len() != geom.out_channels {
            return Err(NnError::Shape { op: "conv2d", expected: format!("{} biases", geom.out_channels), got: format!("{}", bias.len()) });
        }
    }
    let oh = conv_output_side(h, geom.kernel, geom.padding, geom.stride)?;
    let ow = conv_output_side(w, geom.kernel, geom.padding, geom.stride)?;
    let plane = oh * ow;
    let out_len = geom.out_channels * plane;
    let mut out = vec![T::zero(); b * out_len];
    let in_len = c * h * w;
    out.par_chunks_mut(out_len.max(1)).enumerate().for_each(|(i, o)| {
        let mut cols = vec![T::zero(); geom.patch_len() * plane];
        im2col(&x.data()[i * in_len..(i + 1) * in_len], h, w, &geom, oh, ow, &mut cols);
        if let Some(bias) = bias {
            for (oc, row) in o.chunks_mut(plane).enumerate() {
                row.iter_mut().for_each(|v| *v = bias[oc]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(geom.out_channels, geom.patch_len(), plane, weight, false, &cols, false, beta, o);
    });
    ensure_finite("conv2d", &out)?;
    let out = Tensor4::from_vec([b, geom.out_channels, oh, ow], out)?;
    Ok((out, ConvCache { input: x.clone(), geom, out_h: oh, out_w: ow }))
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    cache: &ConvCache<T>,
    weight: &[T],
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    let geom = cache.geom;
    if weight.len() != geom.weight_len() {
        return Err(NnError::Contract(format!(
            "conv2d backward: weight has {} entries, cached geometry needs {}",
            weight.len(),
            geom.weight_len()
        )));
    }
    if grad_out.dims() != cache.output_dims() {
        return Err(NnError::Contract(format!(
            "conv2d backward: gradient dims {:?} do not match cached output {:?}",
            grad_out.dims(),
            cache.output_dims()
        )));
    }
    let [b, c, h, w] = cache.input.dims();
    let (oh, ow) = (cache.out_h, cache.out_w);
    let plane = oh * ow;
    let in_len = c * h * w;
    let out_len = geom.out_channels * plane;
    let patch = geom.patch_len();

    let mut grad_x = vec![T::zero(); b * in_len];
    let partials: Vec<(Vec<T>, Vec<T>)> = grad_x
        .par_chunks_mut((in_len * GRAD_CHUNK).max(1))
        .enumerate()
        .map(|(chunk, gx_chunk)| {
            let mut gw = vec![T::zero(); geom.weight_len()];
            let mut gb = vec![T::zero(); geom.out_channels];
            let mut cols = vec![T::zero(); patch * plane];
            let mut gcols = vec![T::zero(); patch * plane];
            for (j, gx) in gx_chunk.chunks_mut(in_len.max(1)).enumerate() {
                let i = chunk * GRAD_CHUNK + j;
                let g = &grad_out.data()[i * out_len..(i + 1) * out_len];
                im2col(&cache.input.data()[i * in_len..(i + 1) * in_len], h, w, &geom, oh, ow, &mut cols);
                // dW += dY · colsᵀ
                T::gemm(geom.out_channels, plane, patch, g, false, &cols, true, T::one(), &mut gw);
                for (oc, row) in g.chunks(plane).enumerate() {
                    gb[oc] += row.iter().copied().sum();
                }
                // dcols = Wᵀ · dY
                T::gemm(patch, geom.out_channels, plane, weight, true, g, false, T::zero(), &mut gcols);
                col2im(&gcols, h, w, &geom, oh, ow, gx);
            }
            (gw, gb)
        })
        .collect();

    let mut grad_w = vec![T::zero(); geom.weight_len()];
    let mut grad_b = vec![T::zero(); geom.out_channels];
    for (gw, gb) in partials {
        grad_w.iter_mut().zip(gw).for_each(|(a, v)| *a += v);
        grad_b.iter_mut().zip(gb).for_each(|(a, v)| *a += v);
    }
    ensure_finite("conv2d backward", &grad_x)?;
    Ok((Tensor4::from_vec([b, c, h, w], grad_x)?, grad_w, grad_b))
}

/// Convolution layer owning its weights.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub geom: ConvGeometry,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    cache: Option<ConvCache<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(geom: ConvGeometry, with_bias: bool, rng: &mut SeededRng) -> Self {
        let fan_in = geom.patch_len();
        let weight = Param::kaiming_uniform(vec![geom.out_channels, geom.in_channels, geom.kernel, geom.kernel], fan_in, rng);
        let bias = with_bias.then(|| Param::zeros(vec![geom.out_channels]));
        Conv2d { geom, weight, bias, cache: None }
    }

    pub fn forward(&mut self, x: &Tensor4<T>, _ctx: &mut ForwardCtx<'_>) -> Result<Tensor4<T>> {
        let (y, cache) = conv2d_forward(x, &self.weight.value, self.bias.as_ref().map(|b| b.value.as_slice()), self.geom)?;
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let cache = self.cache.take().ok_or_else(|| NnError::Contract("conv2d backward without forward".into()))?;
        let (gx, gw, gb) = conv2d_backward(&cache, &self.weight.value, grad_out)?;
        self.weight.grad.iter_mut().zip(gw).for_each(|(a, v)| *a += v);
        if let Some(bias) = &mut self.bias {
            bias.grad.iter_mut().zip(gb).for_each(|(a, v)| *a += v);
        }
        Ok(gx)
    }

    pub fn output_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let [c, h, w] = input;
        if c != self.geom.in_channels {
            return Err(NnError::Shape { op: "conv2d", expected: format!("{} input channels", self.geom.in_channels), got: format!("{c}") });
        }
        Ok([
            self.geom.out_channels,
            conv_output_side(h, self.geom.kernel, self.geom.padding, self.geom.stride)?,
            conv_output_side(w, self.geom.kernel, self.geom.padding, self.geom.stride)?,
        ])
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, Param::len)
    }

    pub fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        out.push((format!("{prefix}.weight"), &mut self.weight));
        if let Some(b) = &mut self.bias {
            out.push((format!("{prefix}.bias"), b));
        }
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
