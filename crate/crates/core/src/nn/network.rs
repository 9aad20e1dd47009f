use std::collections::{BTreeMap, HashSet};

use crate::tensor::{Float, Tensor};

use super::layer::{BackwardCtx, ForwardCtx, Layer, LayerCache, LayerKind, Mode, Param, Probe};
use super::{NetError, Result};

/// Ordered layer stack with a declared per-sample input shape `[C, H, W]`.
#[derive(Clone, Debug)]
pub struct Network<T: Float = f32> {
    input_shape: [usize; 3],
    layers: Vec<Layer<T>>,
}

/// Activations retained by [`Network::forward`], one entry per executed
/// top-level layer.
#[derive(Clone, Debug)]
pub struct ForwardCache<T: Float = f32> {
    pub(crate) entries: Vec<LayerCache<T>>,
    pub(crate) batch_shape: Vec<usize>,
}

impl<T: Float> ForwardCache<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Named gradient store returned by [`Network::backward`]. Frozen parameters
/// have no entry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients<T: Float = f32> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn global_norm(&self) -> f64 {
        self.map
            .values()
            .map(|t| t.l2_norm().powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

impl<T: Float> Network<T> {
    /// Validates shape compatibility and name uniqueness.
    pub fn new(input_shape: [usize; 3], layers: Vec<Layer<T>>) -> Result<Self> {
        if input_shape.contains(&0) {
            return Err(NetError::Argument(format!(
                "input shape {input_shape:?} has a zero dimension"
            )));
        }
        let net = Self {
            input_shape,
            layers,
        };
        net.output_shape()?;

        let mut layer_names = HashSet::new();
        let mut dup = None;
        for l in &net.layers {
            l.visit_layers(
                &mut |l, _| {
                    if !layer_names.insert(l.name.clone()) {
                        dup.get_or_insert_with(|| l.name.clone());
                    }
                },
                false,
            );
        }
        let mut names = HashSet::new();
        for (name, _) in net.state_records() {
            if !names.insert(name.clone()) {
                dup.get_or_insert(name);
            }
        }
        if let Some(name) = dup {
            return Err(NetError::Composition(format!("duplicate name `{name}`")));
        }
        Ok(net)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub(crate) fn into_layers(self) -> Vec<Layer<T>> {
        self.layers
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let mut shape = self.input_shape.to_vec();
        for l in &self.layers {
            shape = l.output_shape(&shape)?;
        }
        Ok(shape)
    }

    /// Per-sample activation shapes after each top-level layer.
    pub fn layer_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let mut shape = self.input_shape.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            shape = l.output_shape(&shape)?;
            out.push((l.name.clone(), shape.clone()));
        }
        Ok(out)
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.visit_params(&mut |p| out.push(p));
        }
        out
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut Param<T>)) {
        for l in &mut self.layers {
            l.visit_params_mut(&mut f);
        }
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params().into_iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.layers.iter_mut().find_map(|l| l.param_mut(name))
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn num_trainable_parameters(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| !p.frozen)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.for_each_param_mut(|p| p.frozen = frozen);
    }

    /// Every layer name, depth-first.
    pub fn layer_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.visit_layers(&mut |l, _| out.push(l.name.clone()), false);
        }
        out
    }

    /// Names of layers whose activation is a spatial map (Grad-CAM targets).
    pub fn spatial_layer_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.visit_layers(
                &mut |l, _| {
                    if l.is_spatial() {
                        out.push(l.name.clone())
                    }
                },
                false,
            );
        }
        out
    }

    pub fn find_layer(&self, name: &str) -> Option<&Layer<T>> {
        let mut hit = None;
        for l in &self.layers {
            l.visit_layers(
                &mut |l, _| {
                    if l.name == name && hit.is_none() {
                        hit = Some(l);
                    }
                },
                false,
            );
        }
        hit
    }

    /// Last top-level spatial layer before the network collapses to a vector.
    pub fn last_spatial_layer(&self) -> Option<&str> {
        self.layers
            .iter()
            .take_while(|l| l.is_spatial())
            .last()
            .map(|l| l.name.as_str())
    }

    /// Convolutions on the main path plus dense layers; shortcut projections
    /// are not counted.
    pub fn weighted_layer_count(&self) -> usize {
        let mut count = 0;
        for l in &self.layers {
            l.visit_layers(
                &mut |l, in_shortcut| match l.kind {
                    LayerKind::Conv { .. } if !in_shortcut => count += 1,
                    LayerKind::Dense { .. } => count += 1,
                    _ => {}
                },
                false,
            );
        }
        count
    }

    /// Parameters and batch-norm running statistics in traversal order; the
    /// record set persisted by the weight file.
    pub fn state_records(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.visit_layers(
                &mut |l, _| match &l.kind {
                    LayerKind::Conv { weight, bias, .. } => {
                        out.push((weight.name.clone(), weight.value.clone()));
                        if let Some(b) = bias {
                            out.push((b.name.clone(), b.value.clone()));
                        }
                    }
                    LayerKind::BatchNorm {
                        gamma, beta, stats, ..
                    } => {
                        let c = stats.running_mean.len();
                        out.push((gamma.name.clone(), gamma.value.clone()));
                        out.push((beta.name.clone(), beta.value.clone()));
                        out.push((
                            format!("{}.running_mean", l.name),
                            Tensor::new(&[c], stats.running_mean.clone()).expect("channel vector"),
                        ));
                        out.push((
                            format!("{}.running_var", l.name),
                            Tensor::new(&[c], stats.running_var.clone()).expect("channel vector"),
                        ));
                    }
                    LayerKind::Dense { weight, bias } => {
                        out.push((weight.name.clone(), weight.value.clone()));
                        out.push((bias.name.clone(), bias.value.clone()));
                    }
                    _ => {}
                },
                false,
            );
        }
        out
    }

    /// Overwrites records by name. Callers validate names and shapes first.
    pub(crate) fn apply_records(&mut self, mut records: BTreeMap<String, Tensor<T>>) {
        for l in &mut self.layers {
            l.visit_layers_mut(&mut |l| {
                let prefix = l.name.clone();
                match &mut l.kind {
                    LayerKind::BatchNorm { stats, .. } => {
                        if let Some(t) = records.remove(&format!("{prefix}.running_mean")) {
                            stats.running_mean = t.into_data();
                        }
                        if let Some(t) = records.remove(&format!("{prefix}.running_var")) {
                            stats.running_var = t.into_data();
                        }
                    }
                    LayerKind::Residual(_) => return,
                    _ => {}
                }
                let mut set = |p: &mut Param<T>| {
                    if let Some(t) = records.remove(&p.name) {
                        p.value = t;
                    }
                };
                match &mut l.kind {
                    LayerKind::Conv { weight, bias, .. } => {
                        set(weight);
                        if let Some(b) = bias {
                            set(b);
                        }
                    }
                    LayerKind::BatchNorm { gamma, beta, .. } => {
                        set(gamma);
                        set(beta);
                    }
                    LayerKind::Dense { weight, bias } => {
                        set(weight);
                        set(bias);
                    }
                    _ => {}
                }
            });
        }
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = batch.dims4()?;
        if [c, h, w] != self.input_shape {
            return Err(NetError::Tensor(crate::tensor::TensorError::Dimension(format!(
                "batch samples are {:?}, network expects {:?}",
                [c, h, w],
                self.input_shape
            ))));
        }
        Ok(())
    }

    fn run(
        &self,
        batch: &Tensor<T>,
        ctx: &mut ForwardCtx<'_, T>,
    ) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_batch(batch)?;
        let mut x = batch.clone();
        let mut entries = Vec::with_capacity(if ctx.record { self.layers.len() } else { 0 });
        for l in &self.layers {
            let (y, cache) = l.forward(x, ctx)?;
            x = y;
            entries.extend(cache);
        }
        Ok((
            x,
            ForwardCache {
                entries,
                batch_shape: batch.shape().to_vec(),
            },
        ))
    }

    /// Runs the layer stack. In train mode batch-norm running statistics are
    /// updated; infer mode leaves the network untouched.
    pub fn forward(&mut self, batch: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let mut ctx = ForwardCtx {
            mode,
            record: true,
            probe: None,
            bn_updates: Vec::new(),
        };
        let out = self.run(batch, &mut ctx)?;
        if !ctx.bn_updates.is_empty() {
            let mut updates: BTreeMap<String, (Vec<T>, Vec<T>)> = ctx
                .bn_updates
                .into_iter()
                .map(|(n, m, v)| (n, (m, v)))
                .collect();
            for l in &mut self.layers {
                l.visit_layers_mut(&mut |l| {
                    if let LayerKind::BatchNorm { stats, .. } = &mut l.kind {
                        if let Some((m, v)) = updates.remove(&l.name) {
                            stats.blend(&m, &v);
                        }
                    }
                });
            }
        }
        Ok(out)
    }

    /// Inference-mode logits without retaining a cache.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut ctx = ForwardCtx {
            mode: Mode::Infer,
            record: false,
            probe: None,
            bn_updates: Vec::new(),
        };
        Ok(self.run(batch, &mut ctx)?.0)
    }

    pub fn backward(&self, cache: &ForwardCache<T>, grad_logits: &Tensor<T>) -> Result<Gradients<T>> {
        let mut ctx = BackwardCtx {
            param_grads: true,
            grads: BTreeMap::new(),
            probe: None,
        };
        let stop = self
            .layers
            .iter()
            .position(|l| l.has_trainable_params())
            .unwrap_or(self.layers.len());
        self.run_backward(cache, grad_logits, &mut ctx, stop)?;
        Ok(Gradients { map: ctx.grads })
    }

    fn run_backward(
        &self,
        cache: &ForwardCache<T>,
        grad_logits: &Tensor<T>,
        ctx: &mut BackwardCtx<'_, T>,
        stop: usize,
    ) -> Result<()> {
        if cache.entries.len() != self.layers.len() {
            return Err(NetError::State(format!(
                "cache holds {} entries for a {}-layer network",
                cache.entries.len(),
                self.layers.len()
            )));
        }
        let mut out_shape = cache.batch_shape[..1].to_vec();
        out_shape.extend(self.output_shape()?);
        if grad_logits.shape() != out_shape {
            return Err(NetError::State(format!(
                "gradient shape {:?} does not match cached output {out_shape:?}",
                grad_logits.shape()
            )));
        }
        let mut g = grad_logits.clone();
        for (i, (l, c)) in self.layers.iter().zip(&cache.entries).enumerate().rev() {
            if i < stop {
                break;
            }
            let need_input = i > stop;
            match l.backward(c, g, ctx, need_input)? {
                Some(next) => g = next,
                None => break,
            }
        }
        Ok(())
    }

    /// Inference-mode forward and backward of `grad_logits`, capturing the
    /// activation and gradient of the named layer. No parameter gradients
    /// are formed and the network is not modified.
    pub(crate) fn probe(
        &self,
        batch: &Tensor<T>,
        layer: &str,
        grad_for: impl FnOnce(&Tensor<T>) -> Result<Tensor<T>>,
    ) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let top = self
            .layers
            .iter()
            .position(|l| l.contains(layer))
            .ok_or_else(|| NetError::Argument(format!("unknown layer `{layer}`")))?;
        let mut probe = Probe {
            target: layer.to_string(),
            activation: None,
            gradient: None,
        };
        let mut ctx = ForwardCtx {
            mode: Mode::Infer,
            record: true,
            probe: Some(&mut probe),
            bn_updates: Vec::new(),
        };
        let (logits, cache) = self.run(batch, &mut ctx)?;
        let grad = grad_for(&logits)?;
        let mut bctx = BackwardCtx {
            param_grads: false,
            grads: BTreeMap::new(),
            probe: Some(&mut probe),
        };
        self.run_backward(&cache, &grad, &mut bctx, top)?;
        match (probe.activation, probe.gradient) {
            (Some(a), Some(g)) => Ok((logits, a, g)),
            _ => Err(NetError::State(format!(
                "layer `{layer}` was not reached by the forward/backward pass"
            ))),
        }
    }
}
