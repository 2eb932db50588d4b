use super::{ensure_finite, NnError, Param, Result, Scalar, Tensor4};
use crate::rng::SeededRng;

#[derive(Debug, Clone)]
pub struct LinearCache<T> {
    input: Tensor4<T>,
    out_features: usize,
}

/// `y = x·Wᵀ + b` for `x` shaped `(batch, in, 1, 1)` and `W` shaped `(out, in)`.
pub fn linear_forward<T: Scalar>(x: &Tensor4<T>, weight: &[T], bias: Option<&[T]>, out_features: usize) -> Result<(Tensor4<T>, LinearCache<T>)> {
    let [b, f, h, w] = x.dims();
    if h != 1 || w != 1 {
        return Err(NnError::Shape { op: "linear", expected: "(batch, features, 1, 1)".into(), got: format!("{:?}", x.dims()) });
    }
    if weight.len() != out_features * f {
        return Err(NnError::Shape { op: "linear", expected: format!("{} weights", out_features * f), got: format!("{}", weight.len()) });
    }
    let mut y = vec![T::zero(); b * out_features];
    let beta = match bias {
        Some(bias) => {
            if bias.len() != out_features {
                return Err(NnError::Shape { op: "linear", expected: format!("{out_features} biases"), got: format!("{}", bias.len()) });
            }
            for row in y.chunks_mut(out_features) {
                row.copy_from_slice(bias);
            }
            T::one()
        }
        None => T::zero(),
    };
    T::gemm(b, f, out_features, x.data(), false, weight, true, beta, &mut y);
    ensure_finite("linear", &y)?;
    Ok((Tensor4::from_vec([b, out_features, 1, 1], y)?, LinearCache { input: x.clone(), out_features }))
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn linear_backward<T: Scalar>(cache: &LinearCache<T>, weight: &[T], grad_out: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    let [b, f, _, _] = cache.input.dims();
    let o = cache.out_features;
    if grad_out.dims() != [b, o, 1, 1] || weight.len() != o * f {
        return Err(NnError::Contract(format!("linear backward: gradient dims {:?} do not match cached ({b}, {o})", grad_out.dims())));
    }
    let g = grad_out.data();
    let mut gw = vec![T::zero(); o * f];
    T::gemm(o, b, f, g, true, cache.input.data(), false, T::zero(), &mut gw);
    let mut gb = vec![T::zero(); o];
    for row in g.chunks(o) {
        gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
    }
    let mut gx = vec![T::zero(); b * f];
    T::gemm(b, o, f, g, false, weight, false, T::zero(), &mut gx);
    Ok((Tensor4::from_vec([b, f, 1, 1], gx)?, gw, gb))
}

#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    cache: Option<LinearCache<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, with_bias: bool, rng: &mut SeededRng) -> Self {
        Linear {
            in_features,
            out_features,
            weight: Param::kaiming_uniform(vec![out_features, in_features], in_features, rng),
            bias: with_bias.then(|| Param::zeros(vec![out_features])),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (y, cache) = linear_forward(x, &self.weight.value, self.bias.as_ref().map(|b| b.value.as_slice()), self.out_features)?;
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let cache = self.cache.take().ok_or_else(|| NnError::Contract("linear backward without forward".into()))?;
        let (gx, gw, gb) = linear_backward(&cache, &self.weight.value, grad_out)?;
        self.weight.grad.iter_mut().zip(gw).for_each(|(a, v)| *a += v);
        if let Some(b) = &mut self.bias {
            b.grad.iter_mut().zip(gb).for_each(|(a, v)| *a += v);
        }
        Ok(gx)
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_passes_through() {
        let x = Tensor4::<f64>::from_vec([2, 3, 1, 1], vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap();
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let (y, _) = linear_forward(&x, &eye, None, 3).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn classifier_shape() {
        let mut rng = SeededRng::new(0);
        let mut l = Linear::<f32>::new(512, 4, false, &mut rng);
        assert_eq!(l.param_count(), 2048);
        let y = l.forward(&Tensor4::zeros([3, 512, 1, 1])).unwrap();
        assert_eq!(y.dims(), [3, 4, 1, 1]);
    }

    #[test]
    fn rejects_spatial_input() {
        let x = Tensor4::<f64>::zeros([1, 2, 2, 1]);
        assert!(linear_forward(&x, &[0.0; 4], None, 1).is_err());
    }
}
