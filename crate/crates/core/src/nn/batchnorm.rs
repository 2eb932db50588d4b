use super::{ensure_finite, Buffer, ForwardCtx, Mode, NnError, Param, Result, Scalar, Tensor4};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
struct BnCache<T> {
    x_hat: Tensor4<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

/// Per-channel batch normalization with affine `gamma`/`beta` and running
/// statistics (biased batch variance for normalization, unbiased for the
/// running estimate).
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Buffer<T>,
    pub running_var: Buffer<T>,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            gamma: Param::filled(vec![channels], T::one()),
            beta: Param::zeros(vec![channels]),
            running_mean: Buffer { shape: vec![channels], value: vec![T::zero(); channels] },
            running_var: Buffer { shape: vec![channels], value: vec![T::one(); channels] },
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor4<T>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor4<T>> {
        let [b, c, h, w] = x.dims();
        if c != self.channels {
            return Err(NnError::Shape { op: "batchnorm2d", expected: format!("{} channels", self.channels), got: format!("{c}") });
        }
        let plane = h * w;
        let count = b * plane;
        let eps = T::from_f64(BN_EPS);
        let (mean, var) = match ctx.mode {
            Mode::Train => {
                if count < 2 {
                    return Err(NnError::DegenerateVariance);
                }
                let n = T::from_f64(count as f64);
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = T::zero();
                    for i in 0..b {
                        s += x.data()[(i * c + ch) * plane..][..plane].iter().copied().sum::<T>();
                    }
                    let m = s / n;
                    let mut sq = T::zero();
                    for i in 0..b {
                        for &v in &x.data()[(i * c + ch) * plane..][..plane] {
                            sq += (v - m) * (v - m);
                        }
                    }
                    mean[ch] = m;
                    var[ch] = sq / n;
                }
                let mom = T::from_f64(BN_MOMENTUM);
                let unbias = n / (n - T::one());
                for ch in 0..c {
                    let rm = &mut self.running_mean.value[ch];
                    *rm = (T::one() - mom) * *rm + mom * mean[ch];
                    let rv = &mut self.running_var.value[ch];
                    *rv = (T::one() - mom) * *rv + mom * var[ch] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (self.running_mean.value.clone(), self.running_var.value.clone()),
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut x_hat = Tensor4::zeros(x.dims());
        let mut y = Tensor4::zeros(x.dims());
        for i in 0..b {
            for ch in 0..c {
                let off = (i * c + ch) * plane;
                let (g, bt) = (self.gamma.value[ch], self.beta.value[ch]);
                for p in off..off + plane {
                    let xh = (x.data()[p] - mean[ch]) * inv_std[ch];
                    x_hat.data_mut()[p] = xh;
                    y.data_mut()[p] = g * xh + bt;
                }
            }
        }
        ensure_finite("batchnorm2d", y.data())?;
        self.cache = Some(BnCache { x_hat, inv_std, mode: ctx.mode });
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let cache = self.cache.take().ok_or_else(|| NnError::Contract("batchnorm backward without forward".into()))?;
        if grad_out.dims() != cache.x_hat.dims() {
            return Err(NnError::Contract(format!(
                "batchnorm backward: gradient dims {:?} do not match cached {:?}",
                grad_out.dims(),
                cache.x_hat.dims()
            )));
        }
        let [b, c, h, w] = grad_out.dims();
        let plane = h * w;
        let n = T::from_f64((b * plane) as f64);
        let mut gx = Tensor4::zeros(grad_out.dims());
        for ch in 0..c {
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for i in 0..b {
                let off = (i * c + ch) * plane;
                for p in off..off + plane {
                    let g = grad_out.data()[p];
                    sum_g += g;
                    sum_gx += g * cache.x_hat.data()[p];
                }
            }
            self.gamma.grad[ch] += sum_gx;
            self.beta.grad[ch] += sum_g;
            let scale = self.gamma.value[ch] * cache.inv_std[ch];
            for i in 0..b {
                let off = (i * c + ch) * plane;
                for p in off..off + plane {
                    let g = grad_out.data()[p];
                    gx.data_mut()[p] = match cache.mode {
                        Mode::Train => scale / n * (n * g - sum_g - cache.x_hat.data()[p] * sum_gx),
                        Mode::Eval => scale * g,
                    };
                }
            }
        }
        ensure_finite("batchnorm2d backward", gx.data())?;
        Ok(gx)
    }

    /// Trainable count: `gamma` and `beta`, i.e. `2·C`.
    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        out.push((format!("{prefix}.gamma"), &mut self.gamma));
        out.push((format!("{prefix}.beta"), &mut self.beta));
    }

    pub fn collect_buffers<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Buffer<T>)>) {
        out.push((format!("{prefix}.running_mean"), &mut self.running_mean));
        out.push((format!("{prefix}.running_var"), &mut self.running_var));
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}
