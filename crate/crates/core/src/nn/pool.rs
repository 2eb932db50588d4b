use super::{NnError, Result, Scalar, Tensor4};

/// Argmax positions (flat input offsets) from a max-pool forward pass.
#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    input_dims: [usize; 4],
    argmax: Vec<usize>,
}

/// 2×2 max pooling with stride 2. Ties go to the first element in
/// row-major window order.
pub fn maxpool2x2<T: Scalar>(x: &Tensor4<T>) -> Result<(Tensor4<T>, MaxPoolCache)> {
    let [b, c, h, w] = x.dims();
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(NnError::Geometry { op: "maxpool2x2", detail: format!("spatial dims {h}x{w} must be even and non-zero") });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    let data = x.data();
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor4::from_vec([b, c, oh, ow], out)?, MaxPoolCache { input_dims: x.dims(), argmax }))
}

pub fn maxpool_backward<T: Scalar>(cache: &MaxPoolCache, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [b, c, h, w] = cache.input_dims;
    if grad_out.dims() != [b, c, h / 2, w / 2] {
        return Err(NnError::Contract(format!(
            "maxpool backward: gradient dims {:?} do not match cached input {:?}",
            grad_out.dims(),
            cache.input_dims
        )));
    }
    let mut gx = Tensor4::zeros(cache.input_dims);
    let gxd = gx.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
        gxd[idx] += g;
    }
    Ok(gx)
}

/// Mean over each `H×W` map, giving `(batch, channel, 1, 1)`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    let [b, c, h, w] = x.dims();
    let n = T::from_f64((h * w) as f64);
    let data = x.data().chunks((h * w).max(1)).map(|m| m.iter().copied().sum::<T>() / n).collect();
    Tensor4::from_vec([b, c, 1, 1], data).expect("pooled length")
}

pub fn global_avg_pool_backward<T: Scalar>(input_dims: [usize; 4], grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [b, c, h, w] = input_dims;
    if grad_out.dims() != [b, c, 1, 1] {
        return Err(NnError::Contract(format!(
            "global pool backward: gradient dims {:?} do not match input {:?}",
            grad_out.dims(),
            input_dims
        )));
    }
    let n = T::from_f64((h * w) as f64);
    let mut data = Vec::with_capacity(b * c * h * w);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g / n, h * w));
    }
    Tensor4::from_vec(input_dims, data)
}

#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    cache: Option<MaxPoolCache>,
}

impl MaxPool2 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (y, cache) = maxpool2x2(x)?;
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let cache = self.cache.take().ok_or_else(|| NnError::Contract("maxpool backward without forward".into()))?;
        maxpool_backward(&cache, grad_out)
    }

    pub fn output_dims(&self, [c, h, w]: [usize; 3]) -> Result<[usize; 3]> {
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(NnError::Geometry { op: "maxpool2x2", detail: format!("spatial dims {h}x{w} must be even and non-zero") });
        }
        Ok([c, h / 2, w / 2])
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    input_dims: Option<[usize; 4]>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.input_dims = Some(x.dims());
        Ok(global_avg_pool(x))
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let dims = self.input_dims.take().ok_or_else(|| NnError::Contract("global pool backward without forward".into()))?;
        global_avg_pool_backward(dims, grad_out)
    }

    pub fn clear_cache(&mut self) {
        self.input_dims = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_max() {
        let x = Tensor4::<f64>::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = maxpool2x2(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn tie_routes_to_first() {
        let x = Tensor4::<f64>::from_vec([1, 1, 2, 2], vec![5.0; 4]).unwrap();
        let (_, cache) = maxpool2x2(&x).unwrap();
        let g = maxpool_backward(&cache, &Tensor4::from_vec([1, 1, 1, 1], vec![1.0]).unwrap()).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn tie_break_consistent_with_finite_differences_off_the_tie() {
        // Nudging the first element up keeps it the argmax, so its
        // derivative is 1; nudging any other element down keeps the max.
        let h = 1e-6;
        let base = vec![5.0, 5.0, 5.0, 5.0];
        let f = |v: &[f64]| maxpool2x2(&Tensor4::from_vec([1, 1, 2, 2], v.to_vec()).unwrap()).unwrap().0.data()[0];
        let mut up = base.clone();
        up[0] += h;
        assert!(((f(&up) - f(&base)) / h - 1.0).abs() < 1e-6);
        for i in 1..4 {
            let mut down = base.clone();
            down[i] -= h;
            assert_eq!(f(&down), f(&base));
        }
    }

    #[test]
    fn halves_spatial_dims() {
        let x = Tensor4::<f32>::zeros([2, 3, 128, 128]);
        assert_eq!(maxpool2x2(&x).unwrap().0.dims(), [2, 3, 64, 64]);
        assert!(maxpool2x2(&Tensor4::<f32>::zeros([1, 1, 3, 4])).is_err());
    }

    #[test]
    fn global_pool_constant_and_shape() {
        let x = Tensor4::<f64>::from_vec([1, 2, 3, 3], [vec![2.5; 9], vec![-1.0; 9]].concat()).unwrap();
        assert_eq!(global_avg_pool(&x).data(), &[2.5, -1.0]);
        let big = Tensor4::<f32>::zeros([1, 512, 16, 16]);
        assert_eq!(global_avg_pool(&big).dims(), [1, 512, 1, 1]);
    }

    #[test]
    fn global_pool_backward_spreads_uniformly() {
        let g = Tensor4::<f64>::from_vec([1, 1, 1, 1], vec![4.0]).unwrap();
        let gx = global_avg_pool_backward([1, 1, 2, 2], &g).unwrap();
        assert_eq!(gx.data(), &[1.0; 4]);
    }
}
