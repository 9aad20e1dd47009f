use super::{Float, Result, Tensor, TensorError};

/// Affine map `input · weights + bias` for `input: [N, D]`, `weights: [D, M]`.
pub fn dense<T: Float>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = input.dims2()?;
    let (wd, m) = weights.dims2()?;
    if wd != d {
        return Err(TensorError::Dimension(format!(
            "dense input width {d} does not match weight rows {wd}"
        )));
    }
    bias.expect_shape(&[m], "dense bias")?;
    let x = input.data();
    let w = weights.data();
    let mut out = Vec::with_capacity(n * m);
    for ni in 0..n {
        let mut row = bias.data().to_vec();
        for di in 0..d {
            let xv = x[ni * d + di];
            for (o, &wv) in row.iter_mut().zip(&w[di * m..(di + 1) * m]) {
                *o += xv * wv;
            }
        }
        out.extend(row);
    }
    Tensor::new(&[n, m], out)
}

#[derive(Clone, Debug)]
pub struct DenseGrads<T: Float = f32> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn dense_grad<T: Float>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let (n, d) = input.dims2()?;
    let (wd, m) = weights.dims2()?;
    if wd != d {
        return Err(TensorError::Dimension(format!(
            "dense input width {d} does not match weight rows {wd}"
        )));
    }
    grad_output.expect_shape(&[n, m], "dense grad_output")?;
    let x = input.data();
    let w = weights.data();
    let g = grad_output.data();

    let mut gi = vec![T::zero(); n * d];
    let mut gw = vec![T::zero(); d * m];
    let mut gb = vec![T::zero(); m];
    for ni in 0..n {
        let grow = &g[ni * m..(ni + 1) * m];
        for (b, &gv) in gb.iter_mut().zip(grow) {
            *b += gv;
        }
        for di in 0..d {
            let wrow = &w[di * m..(di + 1) * m];
            gi[ni * d + di] = wrow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
            let xv = x[ni * d + di];
            for (acc, &gv) in gw[di * m..(di + 1) * m].iter_mut().zip(grow) {
                *acc += xv * gv;
            }
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(&[n, d], gi)?,
        weights: Tensor::new(&[d, m], gw)?,
        bias: Tensor::new(&[m], gb)?,
    })
}
