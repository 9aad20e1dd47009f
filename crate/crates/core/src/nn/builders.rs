use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::{BatchNormStats, ConvGeometry, Float, Tensor, TensorError};

use super::layer::{Layer, LayerKind, Param, ResidualBlock};
use super::{NetError, Network, Result};

/// Channel widths of the three stages of the imitation network.
pub const IMITATION_STAGE_CHANNELS: [usize; 3] = [16, 32, 64];
const IMITATION_BLOCKS_PER_STAGE: usize = 2;
const BN_EPS: f64 = 1e-5;
const BOTTLENECK_EXPANSION: usize = 4;
const MIN_RESOLUTION: usize = 32;

/// Seeded parameter initializer. Draws happen in construction order, so a
/// fixed seed and layer sequence give bitwise-identical networks.
pub struct NetInit {
    rng: ChaCha8Rng,
}

impl NetInit {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// He-normal: `N(0, 2 / fan_in)`.
    pub fn he_normal<T: Float>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let std = (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("finite std");
        Tensor::from_fn(shape, |_| T::from_f64(dist.sample(&mut self.rng)))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv<T: Float>(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Layer<T>> {
        let geom = ConvGeometry::square(kernel, stride, padding)?;
        let weight = self.he_normal(&[cout, cin, kernel, kernel], cin * kernel * kernel);
        Ok(Layer::new(
            name,
            LayerKind::Conv {
                weight: Param::new(format!("{name}.weight"), weight),
                bias: bias.then(|| Param::new(format!("{name}.bias"), Tensor::zeros(&[cout]))),
                geom,
            },
        ))
    }

    pub fn batchnorm<T: Float>(&mut self, name: &str, channels: usize) -> Layer<T> {
        Layer::new(
            name,
            LayerKind::BatchNorm {
                gamma: Param::new(format!("{name}.gamma"), Tensor::full(&[channels], T::one())),
                beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
                stats: BatchNormStats::new(channels),
                eps: T::from_f64(BN_EPS),
            },
        )
    }

    pub fn dense<T: Float>(&mut self, name: &str, inputs: usize, outputs: usize) -> Layer<T> {
        Layer::new(
            name,
            LayerKind::Dense {
                weight: Param::new(format!("{name}.weight"), self.he_normal(&[inputs, outputs], inputs)),
                bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[outputs])),
            },
        )
    }

    fn projection<T: Float>(&mut self, name: &str, cin: usize, cout: usize, stride: usize) -> Result<Vec<Layer<T>>> {
        if stride == 1 && cin == cout {
            return Ok(Vec::new());
        }
        Ok(vec![
            self.conv(&format!("{name}.shortcut.conv"), cin, cout, 1, stride, 0, false)?,
            self.batchnorm(&format!("{name}.shortcut.bn"), cout),
        ])
    }

    /// conv3x3-bn-relu-conv3x3-bn with an identity or 1x1 projection shortcut.
    pub fn basic_block<T: Float>(&mut self, name: &str, cin: usize, cout: usize, stride: usize) -> Result<Layer<T>> {
        let branch = vec![
            self.conv(&format!("{name}.branch.conv0"), cin, cout, 3, stride, 1, false)?,
            self.batchnorm(&format!("{name}.branch.bn0"), cout),
            Layer::new(format!("{name}.branch.relu0"), LayerKind::Relu),
            self.conv(&format!("{name}.branch.conv1"), cout, cout, 3, 1, 1, false)?,
            self.batchnorm(&format!("{name}.branch.bn1"), cout),
        ];
        let shortcut = self.projection(name, cin, cout, stride)?;
        Ok(Layer::new(name, LayerKind::Residual(ResidualBlock { branch, shortcut })))
    }

    /// 1x1 reduce, strided 3x3, 1x1 expand (x4), each followed by batch norm.
    pub fn bottleneck_block<T: Float>(&mut self, name: &str, cin: usize, mid: usize, stride: usize) -> Result<Layer<T>> {
        let cout = mid * BOTTLENECK_EXPANSION;
        let branch = vec![
            self.conv(&format!("{name}.branch.conv0"), cin, mid, 1, 1, 0, false)?,
            self.batchnorm(&format!("{name}.branch.bn0"), mid),
            Layer::new(format!("{name}.branch.relu0"), LayerKind::Relu),
            self.conv(&format!("{name}.branch.conv1"), mid, mid, 3, stride, 1, false)?,
            self.batchnorm(&format!("{name}.branch.bn1"), mid),
            Layer::new(format!("{name}.branch.relu1"), LayerKind::Relu),
            self.conv(&format!("{name}.branch.conv2"), mid, cout, 1, 1, 0, false)?,
            self.batchnorm(&format!("{name}.branch.bn2"), cout),
        ];
        let shortcut = self.projection(name, cin, cout, stride)?;
        Ok(Layer::new(name, LayerKind::Residual(ResidualBlock { branch, shortcut })))
    }
}

fn check_resolution(resolution: usize) -> Result<()> {
    if resolution < MIN_RESOLUTION {
        return Err(TensorError::Geometry(format!(
            "input resolution {resolution} is below the minimum {MIN_RESOLUTION}"
        ))
        .into());
    }
    Ok(())
}

fn check_classes(num_classes: usize) -> Result<()> {
    if num_classes < 2 {
        return Err(NetError::Argument(format!(
            "need at least two classes, got {num_classes}"
        )));
    }
    Ok(())
}

/// Small from-scratch residual network: a 3x3 stem with 16 channels, three
/// stages of two basic blocks at 16/32/64 channels (stride-2 projections
/// between stages), global average pooling and a dense classifier.
pub fn build_imitation_resnet<T: Float>(
    resolution: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Network<T>> {
    check_resolution(resolution)?;
    check_classes(num_classes)?;
    let mut init = NetInit::new(seed);
    let stem = IMITATION_STAGE_CHANNELS[0];
    let mut layers = vec![
        init.conv("stem.conv", 3, stem, 3, 1, 1, false)?,
        init.batchnorm("stem.bn", stem),
        Layer::new("stem.relu", LayerKind::Relu),
    ];
    let mut cin = stem;
    for (s, &ch) in IMITATION_STAGE_CHANNELS.iter().enumerate() {
        for b in 0..IMITATION_BLOCKS_PER_STAGE {
            let stride = if s > 0 && b == 0 { 2 } else { 1 };
            layers.push(init.basic_block(&format!("stage{}.block{b}", s + 1), cin, ch, stride)?);
            cin = ch;
        }
    }
    layers.push(Layer::new("pool", LayerKind::GlobalAvgPool));
    layers.push(init.dense("fc", cin, num_classes));
    Network::new([3, resolution, resolution], layers)
}

/// Bottleneck block counts per stage for the supported depths.
pub fn resnet_stage_blocks(depth: usize) -> Result<[usize; 4]> {
    match depth {
        50 => Ok([3, 4, 6, 3]),
        101 => Ok([3, 4, 23, 3]),
        152 => Ok([3, 8, 36, 3]),
        other => Err(NetError::Argument(format!(
            "unsupported ResNet depth {other}; expected 50, 101 or 152"
        ))),
    }
}

fn resnet_layers<T: Float>(depth: usize, init: &mut NetInit) -> Result<(Vec<Layer<T>>, usize)> {
    let blocks = resnet_stage_blocks(depth)?;
    let mut layers = vec![
        init.conv("stem.conv", 3, 64, 7, 2, 3, false)?,
        init.batchnorm("stem.bn", 64),
        Layer::new("stem.relu", LayerKind::Relu),
        Layer::new("stem.pool", LayerKind::MaxPool { window: 3, stride: 2 }),
    ];
    let mut cin = 64;
    for (s, (&count, mid)) in blocks.iter().zip([64, 128, 256, 512]).enumerate() {
        for b in 0..count {
            let stride = if s > 0 && b == 0 { 2 } else { 1 };
            layers.push(init.bottleneck_block(&format!("stage{}.block{b}", s + 1), cin, mid, stride)?);
            cin = mid * BOTTLENECK_EXPANSION;
        }
    }
    layers.push(Layer::new("pool", LayerKind::GlobalAvgPool));
    Ok((layers, cin))
}

/// ResNet-50/101/152 feature extractor ending in the pooled feature vector.
pub fn build_resnet_backbone<T: Float>(depth: usize, resolution: usize, seed: u64) -> Result<Network<T>> {
    check_resolution(resolution)?;
    let mut init = NetInit::new(seed);
    let (layers, _) = resnet_layers(depth, &mut init)?;
    Network::new([3, resolution, resolution], layers)
}

/// Randomly initialized ResNet-50/101/152 with a dense classifier.
pub fn build_resnet_family<T: Float>(
    depth: usize,
    resolution: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Network<T>> {
    check_resolution(resolution)?;
    check_classes(num_classes)?;
    let mut init = NetInit::new(seed);
    let (mut layers, features) = resnet_layers(depth, &mut init)?;
    layers.push(init.dense("fc", features, num_classes));
    Network::new([3, resolution, resolution], layers)
}

/// Appends `dense(hidden) -> relu -> dense(num_classes)` to a backbone that
/// ends in a feature vector, optionally freezing every backbone parameter.
pub fn attach_transfer_head<T: Float>(
    mut backbone: Network<T>,
    hidden_units: usize,
    num_classes: usize,
    freeze_backbone: bool,
    seed: u64,
) -> Result<Network<T>> {
    check_classes(num_classes)?;
    if hidden_units == 0 {
        return Err(NetError::Argument("transfer head needs hidden units".into()));
    }
    let features = match backbone.output_shape()?[..] {
        [d] => d,
        ref other => {
            return Err(NetError::Composition(format!(
                "backbone must end in a feature vector, but produces {other:?}"
            )))
        }
    };
    if freeze_backbone {
        backbone.set_frozen(true);
    }
    let input_shape = backbone.input_shape();
    let mut init = NetInit::new(seed);
    let mut layers = backbone.into_layers();
    layers.push(init.dense("head.hidden", features, hidden_units));
    layers.push(Layer::new("head.relu", LayerKind::Relu));
    layers.push(init.dense("head.out", hidden_units, num_classes));
    Network::new(input_shape, layers)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferHead {
    pub hidden_units: usize,
    pub freeze_backbone: bool,
}

/// Serializable architecture description, stored next to checkpoints so a
/// network can be rebuilt before its weights are loaded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Imitation {
        resolution: usize,
        num_classes: usize,
    },
    Resnet {
        depth: usize,
        resolution: usize,
        num_classes: usize,
        transfer_head: Option<TransferHead>,
    },
}

impl ModelSpec {
    pub fn resolution(&self) -> usize {
        match *self {
            ModelSpec::Imitation { resolution, .. } | ModelSpec::Resnet { resolution, .. } => resolution,
        }
    }

    pub fn num_classes(&self) -> usize {
        match *self {
            ModelSpec::Imitation { num_classes, .. } | ModelSpec::Resnet { num_classes, .. } => num_classes,
        }
    }

    pub fn build<T: Float>(&self, seed: u64) -> Result<Network<T>> {
        match *self {
            ModelSpec::Imitation {
                resolution,
                num_classes,
            } => build_imitation_resnet(resolution, num_classes, seed),
            ModelSpec::Resnet {
                depth,
                resolution,
                num_classes,
                transfer_head: None,
            } => build_resnet_family(depth, resolution, num_classes, seed),
            ModelSpec::Resnet {
                depth,
                resolution,
                num_classes,
                transfer_head: Some(head),
            } => attach_transfer_head(
                build_resnet_backbone(depth, resolution, seed)?,
                head.hidden_units,
                num_classes,
                head.freeze_backbone,
                seed.wrapping_add(1),
            ),
        }
    }
}
