use super::{ensure_finite, ForwardCtx, Mode, NnError, Result, Scalar, Tensor4};
use crate::rng::SeededRng;

/// `max(0, x)` elementwise.
pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes gradient where the input was strictly positive; the subgradient
/// at 0 is taken as 0.
pub fn relu_backward<T: Scalar>(input: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    if input.dims() != grad_out.dims() {
        return Err(NnError::Contract(format!("relu backward: {:?} vs {:?}", grad_out.dims(), input.dims())));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::from_vec(input.dims(), data)
}

/// Inverted dropout. Returns the output and the multiplier mask (`None` in
/// eval mode or when `p == 0`).
pub fn dropout<T: Scalar>(x: &Tensor4<T>, p: f64, mode: Mode, rng: &mut SeededRng) -> Result<(Tensor4<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(NnError::Geometry { op: "dropout", detail: format!("probability {p} outside [0, 1)") });
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::from_f64(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..x.len()).map(|_| if rng.next_f64() < p { T::zero() } else { keep }).collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor4::from_vec(x.dims(), data)?, Some(mask)))
}

#[derive(Debug, Clone, Default)]
pub struct Relu<T> {
    input: Option<Tensor4<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Relu { input: None }
    }

    pub fn forward(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let y = relu(x);
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let x = self.input.take().ok_or_else(|| NnError::Contract("relu backward without forward".into()))?;
        relu_backward(&x, grad_out)
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}

#[derive(Debug, Clone)]
pub struct Dropout<T> {
    pub p: f64,
    mask: Option<(Option<Vec<T>>, [usize; 4])>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(p: f64) -> Self {
        Dropout { p, mask: None }
    }

    pub fn forward(&mut self, x: &Tensor4<T>, ctx: &mut ForwardCtx<'_>) -> Result<Tensor4<T>> {
        let (y, mask) = dropout(x, self.p, ctx.mode, ctx.rng)?;
        self.mask = Some((mask, x.dims()));
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (mask, dims) = self.mask.take().ok_or_else(|| NnError::Contract("dropout backward without forward".into()))?;
        grad_out.expect_dims("dropout backward", dims)?;
        match mask {
            None => Ok(grad_out.clone()),
            Some(m) => {
                let data = grad_out.data().iter().zip(&m).map(|(&g, &k)| g * k).collect();
                let g = Tensor4::from_vec(dims, data)?;
                ensure_finite("dropout backward", g.data())?;
                Ok(g)
            }
        }
    }

    pub fn clear_cache(&mut self) {
        self.mask = None;
    }
}

/// `(B, C, H, W)` to `(B, C·H·W, 1, 1)`.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    input_dims: Option<[usize; 4]>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.input_dims = Some(x.dims());
        x.clone().reshape([x.batch(), x.sample_len(), 1, 1])
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let dims = self.input_dims.take().ok_or_else(|| NnError::Contract("flatten backward without forward".into()))?;
        grad_out.clone().reshape(dims)
    }

    pub fn clear_cache(&mut self) {
        self.input_dims = None;
    }
}
