use super::{NnError, Result, Scalar, Tensor4};

/// Mean softmax cross-entropy over the batch.
///
/// `logits` is `(batch, classes, 1, 1)`. Returns the loss and its gradient
/// `(softmax − onehot) / batch`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor4<T>, targets: &[usize]) -> Result<(T, Tensor4<T>)> {
    let [b, k, h, w] = logits.dims();
    if h != 1 || w != 1 || b != targets.len() {
        return Err(NnError::Shape {
            op: "softmax_cross_entropy",
            expected: format!("({}, classes, 1, 1)", targets.len()),
            got: format!("{:?}", logits.dims()),
        });
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
        return Err(NnError::BadTarget { target: bad, classes: k });
    }
    let inv_b = T::one() / T::from_f64(b as f64);
    let mut grad = Vec::with_capacity(b * k);
    let mut total = T::zero();
    for (row, &t) in logits.data().chunks(k).zip(targets) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        // −log q[t] = log Σ e^{z−max} − (z_t − max)
        total += sum.ln() - (row[t] - max);
        for (j, e) in exps.iter().enumerate() {
            let q = *e / sum;
            let onehot = if j == t { T::one() } else { T::zero() };
            grad.push((q - onehot) * inv_b);
        }
    }
    let loss = total * inv_b;
    if !loss.is_finite() {
        return Err(NnError::NonFinite { op: "softmax_cross_entropy" });
    }
    Ok((loss, Tensor4::from_vec(logits.dims(), grad)?))
}
