use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Float, Result, Tensor, TensorError};

/// Stride, symmetric zero padding and kernel extent of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
}

impl ConvGeometry {
    pub fn new(kernel_h: usize, kernel_w: usize, stride: usize, padding: usize) -> Result<Self> {
        if kernel_h == 0 || kernel_w == 0 || stride == 0 {
            return Err(TensorError::Geometry(format!(
                "kernel {kernel_h}x{kernel_w} and stride {stride} must be positive"
            )));
        }
        Ok(Self {
            stride,
            padding,
            kernel_h,
            kernel_w,
        })
    }

    pub fn square(kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        Self::new(kernel, kernel, stride, padding)
    }

    /// Output spatial size `(H + 2p - k) / s + 1` (floor division).
    ///
    /// Fails when the padded input is smaller than the kernel.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            out_dim(h, self.kernel_h, self.stride, self.padding, "height")?,
            out_dim(w, self.kernel_w, self.stride, self.padding, "width")?,
        ))
    }
}

pub(crate) fn out_dim(
    len: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    axis: &str,
) -> Result<usize> {
    let padded = len + 2 * padding;
    if padded < kernel || stride == 0 {
        return Err(TensorError::Geometry(format!(
            "{axis} {len} with padding {padding} is smaller than kernel {kernel}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

struct Plan {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    oh: usize,
    ow: usize,
}

impl Plan {
    fn rows(&self, g: &ConvGeometry) -> usize {
        self.c * g.kernel_h * g.kernel_w
    }
    fn cols(&self) -> usize {
        self.oh * self.ow
    }
    fn direct(&self, g: &ConvGeometry) -> bool {
        g.kernel_h == 1 && g.kernel_w == 1 && g.stride == 1 && g.padding == 0
    }
}

fn plan<T: Float>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: &ConvGeometry,
) -> Result<Plan> {
    let (n, c, h, w) = input.dims4()?;
    let (k, kc, kh, kw) = kernels.dims4()?;
    if kc != c {
        return Err(TensorError::Dimension(format!(
            "input has {c} channels but kernels expect {kc}"
        )));
    }
    if kh != geom.kernel_h || kw != geom.kernel_w {
        return Err(TensorError::Dimension(format!(
            "kernel tensor is {kh}x{kw} but geometry declares {}x{}",
            geom.kernel_h, geom.kernel_w
        )));
    }
    if let Some(b) = bias {
        b.expect_shape(&[k], "conv bias")?;
    }
    let (oh, ow) = geom.output_size(h, w)?;
    Ok(Plan {
        n,
        c,
        h,
        w,
        k,
        oh,
        ow,
    })
}

/// Unrolls one sample's receptive fields into a `[C*kh*kw, oh*ow]` matrix.
fn im2col<T: Float>(x: &[T], p: &Plan, g: &ConvGeometry, col: &mut [T]) {
    let cols = p.cols();
    let pad = g.padding as isize;
    for ci in 0..p.c {
        let plane = &x[ci * p.h * p.w..(ci + 1) * p.h * p.w];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let r = (ci * g.kernel_h + ky) * g.kernel_w + kx;
                let row = &mut col[r * cols..(r + 1) * cols];
                for oy in 0..p.oh {
                    let seg = &mut row[oy * p.ow..(oy + 1) * p.ow];
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= p.h as isize {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * p.w..(iy as usize + 1) * p.w];
                    for (ox, v) in seg.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        *v = if ix < 0 || ix >= p.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back onto the sample it was unrolled from.
fn col2im<T: Float>(col: &[T], p: &Plan, g: &ConvGeometry, x: &mut [T]) {
    let cols = p.cols();
    let pad = g.padding as isize;
    for ci in 0..p.c {
        let plane = &mut x[ci * p.h * p.w..(ci + 1) * p.h * p.w];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let r = (ci * g.kernel_h + ky) * g.kernel_w + kx;
                let row = &col[r * cols..(r + 1) * cols];
                for oy in 0..p.oh {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= p.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * p.w..(iy as usize + 1) * p.w];
                    for ox in 0..p.ow {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < p.w as isize {
                            dst[ix as usize] += row[oy * p.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Eight-lane dot product; fixed association order so results are
/// reproducible.
fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        for l in 0..8 {
            acc[l] += a[i * 8 + l] * b[i * 8 + l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// 2-D cross-correlation over an NCHW batch.
///
/// Unrolls each sample with im2col and accumulates kernel rows in
/// `(channel, ky, kx)` order, then adds the bias, so every output element is
/// summed in the same order as [`conv2d_reference`] and the two agree exactly.
pub fn conv2d<T: Float>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: &ConvGeometry,
) -> Result<Tensor<T>> {
    let p = plan(input, kernels, bias, geom)?;
    let rows = p.rows(geom);
    let cols = p.cols();
    let in_stride = p.c * p.h * p.w;
    let out_stride = p.k * cols;
    let weights = kernels.data();
    let mut out = vec![T::zero(); p.n * out_stride];

    out.par_chunks_mut(out_stride)
        .enumerate()
        .for_each(|(ni, out_n)| {
            let x = &input.data()[ni * in_stride..(ni + 1) * in_stride];
            let owned;
            let col: &[T] = if p.direct(geom) {
                x
            } else {
                let mut buf = vec![T::zero(); rows * cols];
                im2col(x, &p, geom, &mut buf);
                owned = buf;
                &owned
            };
            for ki in 0..p.k {
                let orow = &mut out_n[ki * cols..(ki + 1) * cols];
                let wrow = &weights[ki * rows..(ki + 1) * rows];
                for (r, &wv) in wrow.iter().enumerate() {
                    let crow = &col[r * cols..(r + 1) * cols];
                    for (o, &cv) in orow.iter_mut().zip(crow) {
                        *o += wv * cv;
                    }
                }
                if let Some(b) = bias {
                    let bv = b.data()[ki];
                    for o in orow.iter_mut() {
                        *o += bv;
                    }
                }
            }
        });

    Tensor::new(&[p.n, p.k, p.oh, p.ow], out)
}

/// Direct nested-loop convolution. Slow; kept as the correctness anchor for
/// [`conv2d`].
pub fn conv2d_reference<T: Float>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: &ConvGeometry,
) -> Result<Tensor<T>> {
    let p = plan(input, kernels, bias, geom)?;
    let (kh, kw) = (geom.kernel_h, geom.kernel_w);
    let x = input.data();
    let wt = kernels.data();
    let mut out = Tensor::zeros(&[p.n, p.k, p.oh, p.ow]);
    let o = out.data_mut();
    for ni in 0..p.n {
        for ki in 0..p.k {
            for oy in 0..p.oh {
                for ox in 0..p.ow {
                    let mut acc = T::zero();
                    for ci in 0..p.c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * geom.stride + ky) as isize - geom.padding as isize;
                                let ix = (ox * geom.stride + kx) as isize - geom.padding as isize;
                                if iy < 0 || ix < 0 || iy >= p.h as isize || ix >= p.w as isize {
                                    continue;
                                }
                                let xv = x[((ni * p.c + ci) * p.h + iy as usize) * p.w + ix as usize];
                                let wv = wt[((ki * p.c + ci) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    if let Some(b) = bias {
                        acc += b.data()[ki];
                    }
                    o[((ni * p.k + ki) * p.oh + oy) * p.ow + ox] = acc;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Conv2dGrads<T: Float = f32> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Analytic gradients of a convolution given the upstream gradient.
pub fn conv2d_grad<T: Float>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    geom: &ConvGeometry,
    grad_output: &Tensor<T>,
) -> Result<Conv2dGrads<T>> {
    let (gi, gk, gb) = conv2d_backward(input, kernels, geom, grad_output, true, true)?;
    Ok(Conv2dGrads {
        input: gi.expect("input gradient requested"),
        kernels: gk.expect("kernel gradient requested"),
        bias: gb.expect("bias gradient requested"),
    })
}

type BackwardParts<T> = (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>);

/// Backward pass that can skip the input or parameter gradients.
pub(crate) fn conv2d_backward<T: Float>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    geom: &ConvGeometry,
    grad_output: &Tensor<T>,
    need_input: bool,
    need_params: bool,
) -> Result<BackwardParts<T>> {
    let p = plan(input, kernels, None, geom)?;
    grad_output.expect_shape(&[p.n, p.k, p.oh, p.ow], "conv grad_output")?;
    let rows = p.rows(geom);
    let cols = p.cols();
    let in_stride = p.c * p.h * p.w;
    let out_stride = p.k * cols;
    let weights = kernels.data();
    let g = grad_output.data();

    let per_sample: Vec<(Vec<T>, Vec<T>)> = (0..p.n)
        .into_par_iter()
        .map(|ni| {
            let x = &input.data()[ni * in_stride..(ni + 1) * in_stride];
            let gn = &g[ni * out_stride..(ni + 1) * out_stride];
            let direct = p.direct(geom);

            let mut gk = Vec::new();
            if need_params {
                let owned;
                let col: &[T] = if direct {
                    x
                } else {
                    let mut buf = vec![T::zero(); rows * cols];
                    im2col(x, &p, geom, &mut buf);
                    owned = buf;
                    &owned
                };
                gk = vec![T::zero(); p.k * rows];
                for ki in 0..p.k {
                    let grow = &gn[ki * cols..(ki + 1) * cols];
                    for r in 0..rows {
                        gk[ki * rows + r] = dot(grow, &col[r * cols..(r + 1) * cols]);
                    }
                }
            }

            let mut gx = Vec::new();
            if need_input {
                let mut gcol = vec![T::zero(); rows * cols];
                for ki in 0..p.k {
                    let grow = &gn[ki * cols..(ki + 1) * cols];
                    for r in 0..rows {
                        let wv = weights[ki * rows + r];
                        for (d, &gv) in gcol[r * cols..(r + 1) * cols].iter_mut().zip(grow) {
                            *d += wv * gv;
                        }
                    }
                }
                if direct {
                    gx = gcol;
                } else {
                    gx = vec![T::zero(); in_stride];
                    col2im(&gcol, &p, geom, &mut gx);
                }
            }
            (gk, gx)
        })
        .collect();

    let grad_input = if need_input {
        let mut data = Vec::with_capacity(p.n * in_stride);
        for (_, gx) in &per_sample {
            data.extend_from_slice(gx);
        }
        Some(Tensor::new(input.shape(), data)?)
    } else {
        None
    };

    let (grad_kernels, grad_bias) = if need_params {
        let mut gk = vec![T::zero(); p.k * rows];
        for (part, _) in &per_sample {
            for (a, &b) in gk.iter_mut().zip(part) {
                *a += b;
            }
        }
        let mut gb = vec![T::zero(); p.k];
        for ni in 0..p.n {
            for (ki, b) in gb.iter_mut().enumerate() {
                let off = ni * out_stride + ki * cols;
                *b += g[off..off + cols].iter().copied().sum::<T>();
            }
        }
        (
            Some(Tensor::new(kernels.shape(), gk)?),
            Some(Tensor::new(&[p.k], gb)?),
        )
    } else {
        (None, None)
    };

    Ok((grad_input, grad_kernels, grad_bias))
}
