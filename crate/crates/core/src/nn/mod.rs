//! Dense rank-4 tensors, CNN layers with hand-written backward passes,
//! softmax cross-entropy and Adam.

mod activation;
mod adam;
mod batchnorm;
mod checkpoint;
mod conv;
mod linear;
mod loss;
mod pool;
mod scalar;
mod tensor;

pub use activation::{dropout, relu, relu_backward, Dropout, Flatten, Relu};
pub use adam::{Adam, AdamState};
pub use batchnorm::{BatchNorm2d, BN_EPS, BN_MOMENTUM};
pub use checkpoint::{Checkpoint, CheckpointRecord, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use conv::{conv2d_backward, conv2d_forward, conv_output_side, Conv2d, ConvCache, ConvGeometry};
pub use linear::{linear_backward, linear_forward, Linear, LinearCache};
pub use loss::softmax_cross_entropy;
pub use pool::{global_avg_pool, global_avg_pool_backward, maxpool2x2, maxpool_backward, GlobalAvgPool, MaxPool2, MaxPoolCache};
pub use scalar::Scalar;
pub use tensor::Tensor4;

use thiserror::Error;

use crate::rng::SeededRng;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    Shape { op: &'static str, expected: String, got: String },
    #[error("{op}: invalid geometry: {detail}")]
    Geometry { op: &'static str, detail: String },
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },
    #[error("{0}")]
    Contract(String),
    #[error("batchnorm: a single value per channel has no variance")]
    DegenerateVariance,
    #[error("target class {target} out of range for {classes} classes")]
    BadTarget { target: usize, classes: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Training uses batch statistics and live dropout; evaluation does not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-call forward state: mode flag plus the dropout generator.
pub struct ForwardCtx<'a> {
    pub mode: Mode,
    pub rng: &'a mut SeededRng,
}

impl<'a> ForwardCtx<'a> {
    pub fn new(mode: Mode, rng: &'a mut SeededRng) -> Self {
        ForwardCtx { mode, rng }
    }
}

/// A trainable array with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(shape: Vec<usize>, value: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len(), "param shape/value length");
        let grad = vec![T::zero(); value.len()];
        Param { shape, value, grad }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![T::zero(); n])
    }

    pub fn filled(shape: Vec<usize>, v: T) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![v; n])
    }

    /// Kaiming-uniform with ReLU gain: `U(−√(6/fan_in), √(6/fan_in))`.
    pub fn kaiming_uniform(shape: Vec<usize>, fan_in: usize, rng: &mut SeededRng) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let value = (0..n).map(|_| T::from_f64(rng.uniform(-bound, bound))).collect();
        Self::new(shape, value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Non-trainable state such as batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
}

pub(crate) fn ensure_finite<T: Scalar>(op: &'static str, data: &[T]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NnError::NonFinite { op })
    }
}
