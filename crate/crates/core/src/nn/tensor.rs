use super::{NnError, Result, Scalar};

/// Dense `(batch, channel, height, width)` array, row-major in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor4 { dims, data: vec![T::zero(); dims.iter().product()] }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let want: usize = dims.iter().product();
        if want != data.len() {
            return Err(NnError::Shape {
                op: "tensor",
                expected: format!("{want} elements for {dims:?}"),
                got: format!("{}", data.len()),
            });
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut(usize) -> T) -> Self {
        let n = dims.iter().product();
        Tensor4 { dims, data: (0..n).map(&mut f).collect() }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    /// Elements per batch item.
    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> T {
        let [_, cc, hh, ww] = self.dims;
        self.data[((b * cc + c) * hh + h) * ww + w]
    }

    pub fn reshape(self, dims: [usize; 4]) -> Result<Self> {
        Self::from_vec(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.expect_dims("add", other.dims)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(Tensor4 { dims: self.dims, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor4<U> {
        Tensor4 { dims: self.dims, data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect() }
    }

    pub(crate) fn expect_dims(&self, op: &'static str, dims: [usize; 4]) -> Result<()> {
        if self.dims != dims {
            return Err(NnError::Shape { op, expected: format!("{dims:?}"), got: format!("{:?}", self.dims) });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor4::<f64>::from_fn([2, 3, 4, 5], |i| i as f64);
        assert_eq!(t.at(1, 2, 3, 4), 119.0);
        assert_eq!(t.at(0, 1, 0, 0), 20.0);
        assert_eq!(t.sample(1)[0], 60.0);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor4::<f32>::from_vec([1, 2, 2, 2], vec![0.0; 7]).is_err());
        let t = Tensor4::<f32>::from_vec([1, 2, 2, 2], vec![0.0; 8]).unwrap();
        assert_eq!(t.reshape([1, 8, 1, 1]).unwrap().dims(), [1, 8, 1, 1]);
    }
}
