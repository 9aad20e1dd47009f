//! Run settings shared by `train`, `evaluate`, `explain` and `compare`.
//!
//! Every field can come from a flat JSON file (`--config`) or a flag of the
//! same name; flags win.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use reefgrad_core::data::{Label, SplitRule, SplitSpec};
use reefgrad_core::nn::{ModelSpec, TransferHead};
use reefgrad_core::train::{OptimizerKind, PipelineConfig, TrainConfig, DEFAULT_RESOLUTION};
use serde::{Deserialize, Serialize};

pub const DEFAULT_HIDDEN_UNITS: usize = 256;
pub const DEFAULT_VAL_FRACTION: f64 = 0.25;
pub const DEFAULT_OUT: &str = "reefgrad-out";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    Imitation,
    Resnet50,
    Resnet101,
    Resnet152,
}

impl ModelChoice {
    pub fn depth(self) -> Option<usize> {
        match self {
            ModelChoice::Imitation => None,
            ModelChoice::Resnet50 => Some(50),
            ModelChoice::Resnet101 => Some(101),
            ModelChoice::Resnet152 => Some(152),
        }
    }
}

/// Display name used in reports, matching the comparison table rows.
pub fn model_label(spec: &ModelSpec, sharpen: bool) -> String {
    let base = match spec {
        ModelSpec::Imitation { .. } => "ResNet (Imitation)".to_string(),
        ModelSpec::Resnet { depth, .. } => format!("ResNet{depth}"),
    };
    if sharpen {
        format!("{base} + preprocessing")
    } else {
        base
    }
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    match s.to_ascii_lowercase().as_str() {
        "sgd" => Ok(OptimizerKind::Sgd),
        "adam" => Ok(OptimizerKind::Adam),
        _ => Err(format!("unknown optimizer `{s}` (expected sgd or adam)")),
    }
}

fn parse_split_rule(s: &str) -> Result<SplitRule, String> {
    match s.to_ascii_lowercase().as_str() {
        "stratified" => Ok(SplitRule::Stratified),
        "global" => Ok(SplitRule::Global),
        _ => Err(format!("unknown split rule `{s}` (expected stratified or global)")),
    }
}

fn parse_label(s: &str) -> Result<Label, String> {
    Label::from_str(s).map_err(|e| e.to_string())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset root with `bleached/` and `healthy/` (and optionally manifest.csv).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Architecture (default imitation).
    #[arg(long, value_enum)]
    pub model: Option<ModelChoice>,
    /// Square network input size.
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Apply the sharpening filter after resizing.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub sharpen: Option<bool>,
    /// Longest image side after the initial resize.
    #[arg(long)]
    pub max_dim: Option<usize>,
    /// Width of the transfer head's hidden layer.
    #[arg(long)]
    pub hidden_units: Option<usize>,
    /// Freeze the ResNet backbone (defaults to true only when weights are given).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub freeze_backbone: Option<bool>,
    /// Backbone weight file for `--model resnet*`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Backbone weight files per depth, used by `compare`.
    #[arg(long)]
    pub resnet50_weights: Option<PathBuf>,
    #[arg(long)]
    pub resnet101_weights: Option<PathBuf>,
    #[arg(long)]
    pub resnet152_weights: Option<PathBuf>,
    /// Training epochs (default 20).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size (default 16).
    #[arg(long)]
    pub batch: Option<usize>,
    /// Learning rate (default 0.001).
    #[arg(long)]
    pub lr: Option<f64>,
    /// adam (default) or sgd.
    #[arg(long, value_parser = parse_optimizer)]
    pub optimizer: Option<OptimizerKind>,
    /// Seed for the split, initialization and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fraction held out for validation (default 0.25).
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// stratified (per-class ceil, default) or global (one ceil over all images).
    #[arg(long, value_parser = parse_split_rule)]
    pub split_rule: Option<SplitRule>,
    /// Checkpoint weight file (metadata lives next to it as `<file>.json`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Grad-CAM layer name.
    #[arg(long)]
    pub layer: Option<String>,
    /// Target class: bleached or healthy.
    #[arg(long, value_parser = parse_label)]
    pub class: Option<Label>,
}

macro_rules! overlay_fields {
    ($base:ident, $top:ident; $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f; } )*
    };
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Values set in `flags` replace those in `self`.
    pub fn overlay(mut self, flags: RunConfig) -> Self {
        overlay_fields!(self, flags; data, out, model, resolution, sharpen, max_dim, hidden_units,
            freeze_backbone, weights, resnet50_weights, resnet101_weights, resnet152_weights, epochs,
            batch, lr, optimizer, seed, val_fraction, split_rule, checkpoint, layer, class);
        self
    }

    /// Reads `config` (if any) and applies the flags on top.
    pub fn resolve(config: Option<&Path>, flags: RunConfig) -> Result<Self> {
        let base = match config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Ok(base.overlay(flags))
    }

    pub fn data_dir(&self) -> Result<&Path> {
        match &self.data {
            Some(p) => Ok(p),
            None => bail!("missing --data <dir>"),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn sharpen(&self) -> bool {
        self.sharpen.unwrap_or(false)
    }

    pub fn model(&self) -> ModelChoice {
        self.model.unwrap_or(ModelChoice::Imitation)
    }

    pub fn resolution(&self) -> usize {
        self.resolution.unwrap_or(DEFAULT_RESOLUTION)
    }

    pub fn train_config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch.unwrap_or(d.batch_size),
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            optimizer: self.optimizer.unwrap_or(d.optimizer),
            seed: self.seed(),
            shuffle_each_epoch: d.shuffle_each_epoch,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec::new(self.val_fraction.unwrap_or(DEFAULT_VAL_FRACTION), self.seed())
            .with_rule(self.split_rule.unwrap_or_default())
    }

    pub fn pipeline(&self, resolution: usize, sharpen: bool) -> PipelineConfig {
        let mut p = PipelineConfig::default().with_resolution(resolution).with_sharpen(sharpen);
        if let Some(m) = self.max_dim {
            p.max_dim = m;
        }
        p
    }

    /// Backbone weight file for a given depth: the depth-specific flag, else
    /// `--weights` when it targets the same model.
    pub fn weights_for(&self, choice: ModelChoice) -> Option<&Path> {
        let specific = match choice {
            ModelChoice::Imitation => None,
            ModelChoice::Resnet50 => self.resnet50_weights.as_deref(),
            ModelChoice::Resnet101 => self.resnet101_weights.as_deref(),
            ModelChoice::Resnet152 => self.resnet152_weights.as_deref(),
        };
        specific.or_else(|| match (self.model, choice) {
            (Some(m), c) if m == c && c != ModelChoice::Imitation => self.weights.as_deref(),
            _ => None,
        })
    }

    pub fn model_spec(&self, choice: ModelChoice) -> ModelSpec {
        let resolution = self.resolution();
        match choice.depth() {
            None => ModelSpec::Imitation {
                resolution,
                num_classes: 2,
            },
            Some(depth) => ModelSpec::Resnet {
                depth,
                resolution,
                num_classes: 2,
                transfer_head: Some(TransferHead {
                    hidden_units: self.hidden_units.unwrap_or(DEFAULT_HIDDEN_UNITS),
                    freeze_backbone: self
                        .freeze_backbone
                        .unwrap_or(self.weights_for(choice).is_some()),
                }),
            },
        }
    }
}
