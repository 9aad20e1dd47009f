use super::{Float, Result, Tensor, TensorError};

pub const DEFAULT_BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    /// Normalize with batch statistics and update the running averages.
    Train,
    /// Normalize with the running averages.
    Infer,
}

/// Caller-owned running statistics for one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats<T: Float = f32> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
}

impl<T: Float> BatchNormStats<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::from_f64(DEFAULT_BN_MOMENTUM),
        }
    }
}

/// What the backward pass needs from a forward call.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T: Float = f32> {
    pub mode: BatchNormMode,
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Per-channel batch normalization over `(N, H, W)`.
///
/// In train mode the running statistics are blended as
/// `running = momentum * running + (1 - momentum) * batch` using the biased
/// batch variance.
pub fn batchnorm2d<T: Float>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
    mode: BatchNormMode,
    stats: &mut BatchNormStats<T>,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (out, cache, batch) = batchnorm2d_forward(input, gamma, beta, eps, mode, stats)?;
    if let Some((mean, var)) = batch {
        stats.blend(&mean, &var);
    }
    Ok((out, cache))
}

impl<T: Float> BatchNormStats<T> {
    pub(crate) fn blend(&mut self, mean: &[T], var: &[T]) {
        let m = self.momentum;
        let keep = T::one() - m;
        for (r, &b) in self.running_mean.iter_mut().zip(mean) {
            *r = m * *r + keep * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(var) {
            *r = m * *r + keep * b;
        }
    }
}

type BatchMoments<T> = Option<(Vec<T>, Vec<T>)>;

/// Forward pass that leaves the stats untouched and hands back the batch
/// moments (train mode) for the caller to blend in.
pub(crate) fn batchnorm2d_forward<T: Float>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
    mode: BatchNormMode,
    stats: &BatchNormStats<T>,
) -> Result<(Tensor<T>, BatchNormCache<T>, BatchMoments<T>)> {
    let (n, c, h, w) = input.dims4()?;
    gamma.expect_shape(&[c], "batchnorm gamma")?;
    beta.expect_shape(&[c], "batchnorm beta")?;
    if eps.is_nan() || eps <= T::zero() {
        return Err(TensorError::Degenerate("batchnorm eps must be positive".into()));
    }
    if stats.running_mean.len() != c || stats.running_var.len() != c {
        return Err(TensorError::Dimension(format!(
            "running stats hold {} channels, input has {c}",
            stats.running_mean.len()
        )));
    }
    let area = h * w;
    let count = n * area;
    if count == 0 {
        return Err(TensorError::Degenerate("batchnorm over an empty batch".into()));
    }
    let x = input.data();

    let (mean, var, moments) = match mode {
        BatchNormMode::Train => {
            let denom = T::from_f64(count as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ci in 0..c {
                let mut s = T::zero();
                for ni in 0..n {
                    let off = (ni * c + ci) * area;
                    s += x[off..off + area].iter().copied().sum::<T>();
                }
                let mu = s / denom;
                let mut ss = T::zero();
                for ni in 0..n {
                    let off = (ni * c + ci) * area;
                    for &v in &x[off..off + area] {
                        let d = v - mu;
                        ss += d * d;
                    }
                }
                mean[ci] = mu;
                var[ci] = ss / denom;
            }
            (mean.clone(), var.clone(), Some((mean, var)))
        }
        BatchNormMode::Infer => (stats.running_mean.clone(), stats.running_var.clone(), None),
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut x_hat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let off = (ni * c + ci) * area;
            let (mu, is, g, b) = (mean[ci], inv_std[ci], gamma.data()[ci], beta.data()[ci]);
            for i in off..off + area {
                let xh = (x[i] - mu) * is;
                x_hat[i] = xh;
                out[i] = g * xh + b;
            }
        }
    }
    Ok((
        Tensor::new(input.shape(), out)?,
        BatchNormCache {
            mode,
            x_hat: Tensor::new(input.shape(), x_hat)?,
            inv_std,
        },
        moments,
    ))
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<T: Float = f32> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Full analytic batch-norm gradient. In train mode the batch statistics
/// depend on the input and their contribution is included.
pub fn batchnorm2d_grad<T: Float>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    let (n, c, h, w) = cache.x_hat.dims4()?;
    grad_output.expect_shape(cache.x_hat.shape(), "batchnorm grad_output")?;
    gamma.expect_shape(&[c], "batchnorm gamma")?;
    let area = h * w;
    let count = T::from_f64((n * area) as f64);
    let xh = cache.x_hat.data();
    let g = grad_output.data();

    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ni in 0..n {
        for ci in 0..c {
            let off = (ni * c + ci) * area;
            for i in off..off + area {
                dbeta[ci] += g[i];
                dgamma[ci] += g[i] * xh[i];
            }
        }
    }

    let mut dx = vec![T::zero(); g.len()];
    for ni in 0..n {
        for ci in 0..c {
            let off = (ni * c + ci) * area;
            let scale = gamma.data()[ci] * cache.inv_std[ci];
            match cache.mode {
                BatchNormMode::Train => {
                    // dx = gamma*inv_std/M * (M*dy - sum(dy) - x_hat*sum(dy*x_hat))
                    let k = scale / count;
                    for i in off..off + area {
                        dx[i] = k * (count * g[i] - dbeta[ci] - xh[i] * dgamma[ci]);
                    }
                }
                BatchNormMode::Infer => {
                    for i in off..off + area {
                        dx[i] = scale * g[i];
                    }
                }
            }
        }
    }

    Ok(BatchNormGrads {
        input: Tensor::new(cache.x_hat.shape(), dx)?,
        gamma: Tensor::new(&[c], dgamma)?,
        beta: Tensor::new(&[c], dbeta)?,
    })
}
