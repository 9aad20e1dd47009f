use std::collections::BTreeMap;

use crate::tensor::{
    self, BatchNormCache, BatchNormMode, BatchNormStats, ConvGeometry, Float, PoolIndices, Tensor,
};

use super::{NetError, Result};

/// A named learnable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T: Float = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub frozen: bool,
}

impl<T: Float> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self {
            name: name.into(),
            value,
            frozen: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Residual unit computing `relu(F(x, W) + shortcut(x))`.
///
/// An empty `shortcut` is the identity.
#[derive(Clone, Debug)]
pub struct ResidualBlock<T: Float = f32> {
    pub branch: Vec<Layer<T>>,
    pub shortcut: Vec<Layer<T>>,
}

#[derive(Clone, Debug)]
pub enum LayerKind<T: Float = f32> {
    Conv {
        weight: Param<T>,
        bias: Option<Param<T>>,
        geom: ConvGeometry,
    },
    BatchNorm {
        gamma: Param<T>,
        beta: Param<T>,
        stats: BatchNormStats<T>,
        eps: T,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Residual(ResidualBlock<T>),
    GlobalAvgPool,
    Dense {
        weight: Param<T>,
        bias: Param<T>,
    },
}

#[derive(Clone, Debug)]
pub struct Layer<T: Float = f32> {
    pub name: String,
    pub kind: LayerKind<T>,
}

/// Per-layer data retained by a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub(crate) enum LayerCache<T: Float> {
    Conv { input: Tensor<T> },
    BatchNorm(BatchNormCache<T>),
    Relu { output: Tensor<T> },
    MaxPool(PoolIndices),
    Residual {
        branch: Vec<LayerCache<T>>,
        shortcut: Vec<LayerCache<T>>,
        output: Tensor<T>,
    },
    GlobalAvgPool { input_shape: Vec<usize> },
    Dense { input: Tensor<T> },
}

/// Captures the activation and upstream gradient of one named layer.
#[derive(Clone, Debug)]
pub(crate) struct Probe<T: Float> {
    pub target: String,
    pub activation: Option<Tensor<T>>,
    pub gradient: Option<Tensor<T>>,
}

pub(crate) struct ForwardCtx<'a, T: Float> {
    pub mode: Mode,
    pub record: bool,
    pub probe: Option<&'a mut Probe<T>>,
    pub bn_updates: Vec<(String, Vec<T>, Vec<T>)>,
}

pub(crate) struct BackwardCtx<'a, T: Float> {
    pub param_grads: bool,
    pub grads: BTreeMap<String, Tensor<T>>,
    pub probe: Option<&'a mut Probe<T>>,
}

fn mismatch(layer: &str) -> NetError {
    NetError::State(format!("cache entry does not match layer `{layer}`"))
}

impl<T: Float> Layer<T> {
    pub fn new(name: impl Into<String>, kind: LayerKind<T>) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }

    /// Shape of one sample after this layer (batch axis excluded).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = |what: &str| -> Result<(usize, usize, usize)> {
            match input {
                &[c, h, w] => Ok((c, h, w)),
                _ => Err(NetError::Composition(format!(
                    "{what} `{}` needs a [C, H, W] input, got {input:?}",
                    self.name
                ))),
            }
        };
        match &self.kind {
            LayerKind::Conv { weight, geom, .. } => {
                let (c, h, w) = spatial("convolution")?;
                let s = weight.value.shape();
                if s[1] != c {
                    return Err(NetError::Composition(format!(
                        "convolution `{}` expects {} input channels, got {c}",
                        self.name, s[1]
                    )));
                }
                let (oh, ow) = geom.output_size(h, w)?;
                Ok(vec![s[0], oh, ow])
            }
            LayerKind::BatchNorm { gamma, .. } => {
                let (c, _, _) = spatial("batch norm")?;
                if gamma.value.len() != c {
                    return Err(NetError::Composition(format!(
                        "batch norm `{}` has {} channels, input has {c}",
                        self.name,
                        gamma.value.len()
                    )));
                }
                Ok(input.to_vec())
            }
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::MaxPool { window, stride } => {
                let (c, h, w) = spatial("max pool")?;
                let oh = tensor::ConvGeometry::new(*window, *window, *stride, 0)?.output_size(h, w)?;
                Ok(vec![c, oh.0, oh.1])
            }
            LayerKind::Residual(block) => {
                spatial("residual block")?;
                let mut main = input.to_vec();
                for l in &block.branch {
                    main = l.output_shape(&main)?;
                }
                let mut skip = input.to_vec();
                for l in &block.shortcut {
                    skip = l.output_shape(&skip)?;
                }
                if main != skip {
                    return Err(NetError::Composition(format!(
                        "residual block `{}`: branch yields {main:?} but shortcut yields {skip:?}",
                        self.name
                    )));
                }
                Ok(main)
            }
            LayerKind::GlobalAvgPool => {
                let (c, _, _) = spatial("global average pool")?;
                Ok(vec![c])
            }
            LayerKind::Dense { weight, .. } => {
                let s = weight.value.shape();
                if input != [s[0]] {
                    return Err(NetError::Composition(format!(
                        "dense `{}` expects a [{}] feature vector, got {input:?}",
                        self.name, s[0]
                    )));
                }
                Ok(vec![s[1]])
            }
        }
    }

    pub(crate) fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        match &self.kind {
            LayerKind::Conv { weight, bias, .. } => {
                f(weight);
                if let Some(b) = bias {
                    f(b);
                }
            }
            LayerKind::BatchNorm { gamma, beta, .. } => {
                f(gamma);
                f(beta);
            }
            LayerKind::Dense { weight, bias } => {
                f(weight);
                f(bias);
            }
            LayerKind::Residual(block) => {
                for l in block.branch.iter().chain(&block.shortcut) {
                    l.visit_params(f);
                }
            }
            LayerKind::Relu | LayerKind::MaxPool { .. } | LayerKind::GlobalAvgPool => {}
        }
    }

    pub(crate) fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        match &mut self.kind {
            LayerKind::Conv { weight, bias, .. } => {
                f(weight);
                if let Some(b) = bias {
                    f(b);
                }
            }
            LayerKind::BatchNorm { gamma, beta, .. } => {
                f(gamma);
                f(beta);
            }
            LayerKind::Dense { weight, bias } => {
                f(weight);
                f(bias);
            }
            LayerKind::Residual(block) => {
                for l in block.branch.iter_mut().chain(block.shortcut.iter_mut()) {
                    l.visit_params_mut(f);
                }
            }
            LayerKind::Relu | LayerKind::MaxPool { .. } | LayerKind::GlobalAvgPool => {}
        }
    }

    pub(crate) fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        match &mut self.kind {
            LayerKind::Conv { weight, bias, .. } => {
                if weight.name == name {
                    return Some(weight);
                }
                bias.as_mut().filter(|b| b.name == name)
            }
            LayerKind::BatchNorm { gamma, beta, .. } => [gamma, beta].into_iter().find(|p| p.name == name),
            LayerKind::Dense { weight, bias } => [weight, bias].into_iter().find(|p| p.name == name),
            LayerKind::Residual(block) => block
                .branch
                .iter_mut()
                .chain(block.shortcut.iter_mut())
                .find_map(|l| l.param_mut(name)),
            LayerKind::Relu | LayerKind::MaxPool { .. } | LayerKind::GlobalAvgPool => None,
        }
    }

    /// Depth-first walk over this layer and every nested layer.
    pub(crate) fn visit_layers<'a>(&'a self, f: &mut dyn FnMut(&'a Layer<T>, bool), in_shortcut: bool) {
        f(self, in_shortcut);
        if let LayerKind::Residual(block) = &self.kind {
            for l in &block.branch {
                l.visit_layers(f, in_shortcut);
            }
            for l in &block.shortcut {
                l.visit_layers(f, true);
            }
        }
    }

    pub(crate) fn visit_layers_mut(&mut self, f: &mut dyn FnMut(&mut Layer<T>)) {
        f(self);
        if let LayerKind::Residual(block) = &mut self.kind {
            for l in block.branch.iter_mut().chain(block.shortcut.iter_mut()) {
                l.visit_layers_mut(f);
            }
        }
    }

    pub fn has_trainable_params(&self) -> bool {
        let mut any = false;
        self.visit_params(&mut |p| any |= !p.frozen);
        any
    }

    /// Whether this layer's activation is a spatial `[C, H, W]` map.
    pub fn is_spatial(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::Conv { .. }
                | LayerKind::BatchNorm { .. }
                | LayerKind::Relu
                | LayerKind::MaxPool { .. }
                | LayerKind::Residual(_)
        )
    }

    pub(crate) fn contains(&self, name: &str) -> bool {
        let mut found = false;
        self.visit_layers(&mut |l, _| found |= l.name == name, false);
        found
    }

    pub(crate) fn forward(
        &self,
        x: Tensor<T>,
        ctx: &mut ForwardCtx<'_, T>,
    ) -> Result<(Tensor<T>, Option<LayerCache<T>>)> {
        let (y, cache) = match &self.kind {
            LayerKind::Conv { weight, bias, geom } => {
                let y = tensor::conv2d(&x, &weight.value, bias.as_ref().map(|b| &b.value), geom)?;
                (y, ctx.record.then_some(LayerCache::Conv { input: x }))
            }
            LayerKind::BatchNorm {
                gamma,
                beta,
                stats,
                eps,
            } => {
                // Frozen batch norm keeps using its running statistics.
                let mode = if ctx.mode == Mode::Train && !gamma.frozen {
                    BatchNormMode::Train
                } else {
                    BatchNormMode::Infer
                };
                let (y, cache, moments) = tensor::norm_forward(&x, &gamma.value, &beta.value, *eps, mode, stats)?;
                if let Some((mean, var)) = moments {
                    ctx.bn_updates.push((self.name.clone(), mean, var));
                }
                (y, ctx.record.then_some(LayerCache::BatchNorm(cache)))
            }
            LayerKind::Relu => {
                let y = tensor::relu(&x);
                let cache = ctx.record.then(|| LayerCache::Relu { output: y.clone() });
                (y, cache)
            }
            LayerKind::MaxPool { window, stride } => {
                let (y, idx) = tensor::maxpool2d(&x, *window, *stride)?;
                (y, ctx.record.then_some(LayerCache::MaxPool(idx)))
            }
            LayerKind::Residual(block) => {
                let mut branch_caches = Vec::with_capacity(block.branch.len());
                let mut shortcut_caches = Vec::with_capacity(block.shortcut.len());
                let mut skip = x.clone();
                for l in &block.shortcut {
                    let (y, c) = l.forward(skip, ctx)?;
                    skip = y;
                    shortcut_caches.extend(c);
                }
                let mut main = x;
                for l in &block.branch {
                    let (y, c) = l.forward(main, ctx)?;
                    main = y;
                    branch_caches.extend(c);
                }
                if main.shape() != skip.shape() {
                    return Err(NetError::Composition(format!(
                        "residual block `{}`: branch output {:?} vs shortcut {:?}",
                        self.name,
                        main.shape(),
                        skip.shape()
                    )));
                }
                for (m, &s) in main.data_mut().iter_mut().zip(skip.data()) {
                    *m += s;
                    if *m < T::zero() {
                        *m = T::zero();
                    }
                }
                let cache = ctx.record.then(|| LayerCache::Residual {
                    branch: branch_caches,
                    shortcut: shortcut_caches,
                    output: main.clone(),
                });
                (main, cache)
            }
            LayerKind::GlobalAvgPool => {
                let y = tensor::global_avg_pool(&x)?;
                (
                    y,
                    ctx.record.then(|| LayerCache::GlobalAvgPool {
                        input_shape: x.shape().to_vec(),
                    }),
                )
            }
            LayerKind::Dense { weight, bias } => {
                let y = tensor::dense(&x, &weight.value, &bias.value)?;
                (y, ctx.record.then_some(LayerCache::Dense { input: x }))
            }
        };
        if let Some(probe) = ctx.probe.as_deref_mut() {
            if probe.target == self.name {
                probe.activation = Some(y.clone());
            }
        }
        Ok((y, cache))
    }

    /// Propagates `grad` (w.r.t. this layer's output) backwards, collecting
    /// parameter gradients. Returns the input gradient when `need_input`.
    pub(crate) fn backward(
        &self,
        cache: &LayerCache<T>,
        grad: Tensor<T>,
        ctx: &mut BackwardCtx<'_, T>,
        need_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        if let Some(probe) = ctx.probe.as_deref_mut() {
            if probe.target == self.name {
                probe.gradient = Some(grad.clone());
            }
        }
        match (&self.kind, cache) {
            (LayerKind::Conv { weight, bias, geom }, LayerCache::Conv { input }) => {
                let need_params = ctx.param_grads && !weight.frozen;
                if !need_params && !need_input {
                    return Ok(None);
                }
                let (gi, gk, gb) =
                    tensor::conv_backward(input, &weight.value, geom, &grad, need_input, need_params)?;
                if let (Some(gk), Some(gb)) = (gk, gb) {
                    ctx.grads.insert(weight.name.clone(), gk);
                    if let Some(b) = bias {
                        if !b.frozen {
                            ctx.grads.insert(b.name.clone(), gb);
                        }
                    }
                }
                Ok(gi)
            }
            (LayerKind::BatchNorm { gamma, beta, .. }, LayerCache::BatchNorm(c)) => {
                let g = tensor::batchnorm2d_grad(c, &gamma.value, &grad)?;
                if ctx.param_grads && !gamma.frozen {
                    ctx.grads.insert(gamma.name.clone(), g.gamma);
                }
                if ctx.param_grads && !beta.frozen {
                    ctx.grads.insert(beta.name.clone(), g.beta);
                }
                Ok(need_input.then_some(g.input))
            }
            (LayerKind::Relu, LayerCache::Relu { output }) => {
                Ok(need_input.then(|| tensor::relu_grad(output, &grad)).transpose()?)
            }
            (LayerKind::MaxPool { .. }, LayerCache::MaxPool(idx)) => Ok(need_input
                .then(|| tensor::maxpool2d_grad(idx, &grad, &idx.input_shape))
                .transpose()?),
            (
                LayerKind::Residual(block),
                LayerCache::Residual {
                    branch,
                    shortcut,
                    output,
                },
            ) => {
                if branch.len() != block.branch.len() || shortcut.len() != block.shortcut.len() {
                    return Err(mismatch(&self.name));
                }
                let g_sum = tensor::relu_grad(output, &grad)?;
                let g_main = backward_chain(&block.branch, branch, g_sum.clone(), ctx, need_input)?;
                let g_skip = if block.shortcut.is_empty() {
                    need_input.then_some(g_sum)
                } else {
                    backward_chain(&block.shortcut, shortcut, g_sum, ctx, need_input)?
                };
                match (g_main, g_skip) {
                    (Some(mut m), Some(s)) => {
                        for (a, &b) in m.data_mut().iter_mut().zip(s.data()) {
                            *a += b;
                        }
                        Ok(Some(m))
                    }
                    _ if !need_input => Ok(None),
                    _ => Err(mismatch(&self.name)),
                }
            }
            (LayerKind::GlobalAvgPool, LayerCache::GlobalAvgPool { input_shape }) => Ok(need_input
                .then(|| tensor::global_avg_pool_grad(input_shape, &grad))
                .transpose()?),
            (LayerKind::Dense { weight, bias }, LayerCache::Dense { input }) => {
                let g = tensor::dense_grad(input, &weight.value, &grad)?;
                if ctx.param_grads && !weight.frozen {
                    ctx.grads.insert(weight.name.clone(), g.weights);
                }
                if ctx.param_grads && !bias.frozen {
                    ctx.grads.insert(bias.name.clone(), g.bias);
                }
                Ok(need_input.then_some(g.input))
            }
            _ => Err(mismatch(&self.name)),
        }
    }
}

/// Backward through a layer chain; only the first layer may skip its input
/// gradient.
fn backward_chain<T: Float>(
    layers: &[Layer<T>],
    caches: &[LayerCache<T>],
    grad: Tensor<T>,
    ctx: &mut BackwardCtx<'_, T>,
    need_input: bool,
) -> Result<Option<Tensor<T>>> {
    let mut g = grad;
    for (i, (l, c)) in layers.iter().zip(caches).enumerate().rev() {
        let need = need_input || i > 0;
        match l.backward(c, g, ctx, need)? {
            Some(next) => g = next,
            None if i == 0 => return Ok(None),
            None => return Err(mismatch(&l.name)),
        }
    }
    Ok(Some(g))
}
