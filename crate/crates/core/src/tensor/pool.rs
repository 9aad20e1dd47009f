use super::conv::out_dim;
use super::{Float, Result, Tensor, TensorError};

/// Winning input positions recorded by [`maxpool2d`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    /// Flat index into the input for every output element.
    pub argmax: Vec<usize>,
}

/// Unpadded max pooling. Ties resolve to the first element in row-major
/// window order.
pub fn maxpool2d<T: Float>(
    input: &Tensor<T>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, PoolIndices)> {
    if window == 0 || stride == 0 {
        return Err(TensorError::Geometry(format!(
            "pool window {window} and stride {stride} must be positive"
        )));
    }
    let (n, c, h, w) = input.dims4()?;
    let oh = out_dim(h, window, stride, 0, "height")?;
    let ow = out_dim(w, window, stride, 0, "width")?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + oy * stride * w + ox * stride;
                let mut best = x[best_idx];
                for ky in 0..window {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..window {
                        if x[row + kx] > best || x[row + kx].is_nan() {
                            best = x[row + kx];
                            best_idx = row + kx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    let output_shape = vec![n, c, oh, ow];
    Ok((
        Tensor::new(&output_shape, out)?,
        PoolIndices {
            input_shape: input.shape().to_vec(),
            output_shape,
            argmax,
        },
    ))
}

/// Routes each upstream gradient to its recorded argmax. Overlapping windows
/// accumulate.
pub fn maxpool2d_grad<T: Float>(
    indices: &PoolIndices,
    grad_output: &Tensor<T>,
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if indices.input_shape != input_shape {
        return Err(TensorError::Dimension(format!(
            "pool indices were recorded for input {:?}, not {input_shape:?}",
            indices.input_shape
        )));
    }
    grad_output.expect_shape(&indices.output_shape, "maxpool grad_output")?;
    let mut gi = Tensor::zeros(input_shape);
    let d = gi.data_mut();
    for (&idx, &g) in indices.argmax.iter().zip(grad_output.data()) {
        d[idx] += g;
    }
    Ok(gi)
}

/// Mean over spatial positions: `[N, C, H, W] -> [N, C]`.
pub fn global_avg_pool<T: Float>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let area = h * w;
    let scale = T::from_f64(area as f64);
    let out = input
        .data()
        .chunks(area)
        .map(|plane| plane.iter().copied().sum::<T>() / scale)
        .collect();
    Tensor::new(&[n, c], out)
}

pub fn global_avg_pool_grad<T: Float>(
    input_shape: &[usize],
    grad_output: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_shape[..] else {
        return Err(TensorError::Dimension(format!(
            "global_avg_pool input must be rank 4, got {input_shape:?}"
        )));
    };
    grad_output.expect_shape(&[n, c], "global_avg_pool grad_output")?;
    let area = h * w;
    let scale = T::from_f64(area as f64);
    let mut data = Vec::with_capacity(n * c * area);
    for &g in grad_output.data() {
        let v = g / scale;
        data.extend(std::iter::repeat_n(v, area));
    }
    Tensor::new(input_shape, data)
}
