use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    load_image, resize_max_dim, sharpen, to_tensor, DatasetManifest, ImageRgb, Normalization,
    DEFAULT_MAX_DIM,
};
use crate::tensor::{Float, Tensor};

use super::{Result, TrainError};

/// Network input resolution used when none is configured.
pub const DEFAULT_RESOLUTION: usize = 128;

/// Image-to-tensor preprocessing applied to every dataset entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub resolution: usize,
    pub max_dim: usize,
    pub sharpen: bool,
    pub normalization: Normalization,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            max_dim: DEFAULT_MAX_DIM,
            sharpen: false,
            normalization: Normalization::UnitRange,
        }
    }
}

impl PipelineConfig {
    pub fn with_resolution(mut self, resolution: usize) -> Self {
        self.resolution = resolution;
        self
    }

    pub fn with_sharpen(mut self, sharpen: bool) -> Self {
        self.sharpen = sharpen;
        self
    }
}

/// Resize to the ingestion bound, optionally sharpen, then convert.
pub fn preprocess<T: Float>(img: &ImageRgb, config: &PipelineConfig) -> Tensor<T> {
    let mut img = resize_max_dim(img, config.max_dim);
    if config.sharpen {
        img = sharpen(&img);
    }
    to_tensor(&img, config.resolution, &config.normalization)
}

/// Preprocessed `[3, R, R]` samples with class indices.
#[derive(Clone, Debug)]
pub struct Dataset<T: Float = f32> {
    inputs: Vec<Tensor<T>>,
    labels: Vec<usize>,
    paths: Vec<String>,
}

impl<T: Float> Dataset<T> {
    pub fn from_tensors(inputs: Vec<Tensor<T>>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(TrainError::Argument(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(first) = inputs.first() {
            if first.rank() != 3 {
                return Err(TrainError::Argument(format!(
                    "samples must be [C, H, W], got {:?}",
                    first.shape()
                )));
            }
            if let Some(bad) = inputs.iter().position(|t| t.shape() != first.shape()) {
                return Err(TrainError::Argument(format!(
                    "sample {bad} has shape {:?}, expected {:?}",
                    inputs[bad].shape(),
                    first.shape()
                )));
            }
        }
        let paths = (0..inputs.len()).map(|i| format!("#{i}")).collect();
        Ok(Self {
            inputs,
            labels,
            paths,
        })
    }

    pub fn from_images(images: &[(ImageRgb, usize)], config: &PipelineConfig) -> Result<Self> {
        let inputs = images.par_iter().map(|(img, _)| preprocess(img, config)).collect();
        Self::from_tensors(inputs, images.iter().map(|(_, l)| *l).collect())
    }

    /// Decodes and preprocesses every manifest entry (paths relative to
    /// `root`) in parallel, preserving manifest order.
    pub fn load(root: impl AsRef<Path>, manifest: &DatasetManifest, config: &PipelineConfig) -> Result<Self> {
        let root = root.as_ref();
        let inputs = manifest
            .entries()
            .par_iter()
            .map(|e| Ok(preprocess(&load_image(root.join(&e.path))?, config)))
            .collect::<Result<Vec<Tensor<T>>>>()?;
        let labels = manifest.entries().iter().map(|e| e.label.index()).collect();
        let mut ds = Self::from_tensors(inputs, labels)?;
        ds.paths = manifest.entries().iter().map(|e| e.path.clone()).collect();
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn paths(&self) -> &[String] {
        &self.paths
    }

    pub fn input(&self, index: usize) -> &Tensor<T> {
        &self.inputs[index]
    }

    pub fn sample_shape(&self) -> Option<&[usize]> {
        self.inputs.first().map(|t| t.shape())
    }

    /// Stacks the selected samples into an `[n, C, H, W]` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let items: Vec<&Tensor<T>> = indices.iter().map(|&i| &self.inputs[i]).collect();
        let x = Tensor::stack(&items)?;
        Ok((x, indices.iter().map(|&i| self.labels[i]).collect()))
    }
}
