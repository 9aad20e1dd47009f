use super::{Float, Result, Tensor};

/// Elementwise `max(0, x)`. NaN passes through.
pub fn relu<T: Float>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() || v.is_nan() { v } else { T::zero() })
}

/// Passes the upstream gradient where `x > 0`. The subgradient at exactly
/// zero is taken as 0.
pub fn relu_grad<T: Float>(input: &Tensor<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    grad_output.expect_shape(input.shape(), "relu grad_output")?;
    let data = input
        .data()
        .iter()
        .zip(grad_output.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape(), data)
}
