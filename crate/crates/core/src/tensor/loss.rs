use super::{Float, Result, Tensor, TensorError};

/// Mean softmax cross-entropy over a batch of logits `[N, K]`.
///
/// Returns the loss and its gradient `(softmax - onehot) / N`. Rows are
/// shifted by their max before exponentiation.
pub fn softmax_cross_entropy<T: Float>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Tensor<T>)> {
    let (n, k) = logits.dims2()?;
    if labels.len() != n {
        return Err(TensorError::Dimension(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(TensorError::Label { label, classes: k });
    }
    let batch = T::from_f64(n as f64);
    let mut grad = Vec::with_capacity(n * k);
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let z: T = exps.iter().copied().sum();
        // -log softmax[label] = log z - (x_label - max)
        total += z.ln() - (row[label] - max);
        for (j, e) in exps.into_iter().enumerate() {
            let p = e / z;
            let target = if j == label { T::one() } else { T::zero() };
            grad.push((p - target) / batch);
        }
    }
    Ok((total / batch, Tensor::new(&[n, k], grad)?))
}

/// Row-wise softmax probabilities.
pub fn softmax<T: Float>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = logits.dims2()?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let z: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / z));
    }
    Tensor::new(logits.shape(), out)
}
