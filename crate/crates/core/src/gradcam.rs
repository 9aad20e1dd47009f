//! Gradient-weighted class activation maps and heatmap overlays.
//!
//! For a selected activation `A` with `K` channels, the channel weight
//! `alpha_k` is the spatial mean of `d score / d A_k`, where the score is the
//! target class's pre-softmax logit. The coarse map `relu(sum_k alpha_k A_k)`
//! is bilinearly upsampled to the input size and divided by its maximum
//! (left all-zero when there is no positive evidence).

use std::fmt::Write as _;

use thiserror::Error;

use crate::data::{bilinear_resample, ImageRgb};
use crate::nn::{NetError, Network};
use crate::tensor::{softmax, Float, Tensor};

/// Heatmap opacity used by [`overlay`] when none is given.
pub const DEFAULT_ALPHA: f64 = 0.4;

#[derive(Debug, Error)]
pub enum GradCamError {
    #[error("unknown layer `{name}`; valid layers: {}", valid.join(", "))]
    Selector { name: String, valid: Vec<String> },
    #[error("layer `{0}` does not produce a spatial activation")]
    NotSpatial(String),
    #[error("target class {class} out of range for {classes} classes")]
    Class { class: usize, classes: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

pub type Result<T, E = GradCamError> = std::result::Result<T, E>;

/// Row-major map of values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl HeatMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// `(x, y)` of the first maximum in row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// One CSV row per image row.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.values.chunks(self.width) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(s, "{}", cells.join(",")).unwrap();
        }
        s
    }
}

/// Everything computed while explaining one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Explanation {
    pub heatmap: HeatMap,
    pub layer: String,
    pub target_class: usize,
    /// Softmax over the logits.
    pub probabilities: Vec<f64>,
}

impl Explanation {
    pub fn confidence(&self) -> f64 {
        self.probabilities[self.target_class]
    }
}

/// Layer used when no selector is given: the last spatial activation before
/// the network collapses to a vector.
pub fn default_layer<T: Float>(network: &Network<T>) -> Option<String> {
    network.last_spatial_layer().map(str::to_owned)
}

fn resolve_layer<T: Float>(network: &Network<T>, layer: Option<&str>) -> Result<String> {
    let name = match layer {
        Some(n) => n.to_string(),
        None => default_layer(network).ok_or_else(|| GradCamError::Selector {
            name: "<default>".into(),
            valid: network.spatial_layer_names(),
        })?,
    };
    match network.find_layer(&name) {
        None => Err(GradCamError::Selector {
            name,
            valid: network.spatial_layer_names(),
        }),
        Some(l) if !l.is_spatial() => Err(GradCamError::NotSpatial(name)),
        Some(_) => Ok(name),
    }
}

/// Coarse map `relu(sum_k alpha_k A_k)` from an activation and its gradient,
/// both `[K, h, w]` (a leading batch dimension of 1 is accepted).
pub fn weighted_activation<T: Float>(activation: &Tensor<T>, gradient: &Tensor<T>) -> Result<(usize, usize, Vec<f64>)> {
    if activation.shape() != gradient.shape() {
        return Err(GradCamError::Dimension(format!(
            "activation {:?} and gradient {:?} differ",
            activation.shape(),
            gradient.shape()
        )));
    }
    let (k, h, w) = match *activation.shape() {
        [1, k, h, w] | [k, h, w] => (k, h, w),
        ref s => {
            return Err(GradCamError::Dimension(format!(
                "expected a [K, h, w] activation, got {s:?}"
            )))
        }
    };
    let area = h * w;
    let mut map = vec![0.0; area];
    let a = activation.data();
    let g = gradient.data();
    for c in 0..k {
        let plane = c * area..(c + 1) * area;
        let alpha = g[plane.clone()].iter().map(|v| v.as_f64()).sum::<f64>() / area as f64;
        for (m, v) in map.iter_mut().zip(&a[plane]) {
            *m += alpha * v.as_f64();
        }
    }
    for m in &mut map {
        *m = m.max(0.0);
    }
    Ok((w, h, map))
}

/// Upsamples a coarse map to `width x height` and max-normalizes it.
pub fn finish_map(w: usize, h: usize, coarse: &[f64], width: usize, height: usize) -> HeatMap {
    let mut values = if (w, h) == (width, height) {
        coarse.to_vec()
    } else {
        bilinear_resample(coarse, w, h, 1, width, height)
    };
    let max = values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        for v in &mut values {
            *v = (*v / max).clamp(0.0, 1.0);
        }
    } else {
        values.iter_mut().for_each(|v| *v = 0.0);
    }
    HeatMap {
        width,
        height,
        values,
    }
}

/// Explains one `[3, H, W]` (or `[1, 3, H, W]`) input. `layer = None` uses
/// [`default_layer`]. The network is only read.
pub fn explain<T: Float>(
    network: &Network<T>,
    input: &Tensor<T>,
    target_class: usize,
    layer: Option<&str>,
) -> Result<Explanation> {
    let batch = match input.rank() {
        3 => input.clone().reshape(&[1, input.shape()[0], input.shape()[1], input.shape()[2]])
            .map_err(NetError::from)?,
        4 if input.shape()[0] == 1 => input.clone(),
        _ => {
            return Err(GradCamError::Dimension(format!(
                "expected a single [3, H, W] image, got {:?}",
                input.shape()
            )))
        }
    };
    let (height, width) = (batch.shape()[2], batch.shape()[3]);
    let layer = resolve_layer(network, layer)?;
    let classes = network.output_shape()?.iter().product::<usize>();
    if target_class >= classes {
        return Err(GradCamError::Class {
            class: target_class,
            classes,
        });
    }
    let (logits, activation, gradient) = network.probe(&batch, &layer, |logits| {
        let mut g = Tensor::zeros(logits.shape());
        g.data_mut()[target_class] = T::one();
        Ok(g)
    })?;
    let (w, h, coarse) = weighted_activation(&activation, &gradient)?;
    let probabilities = softmax(&logits.cast::<f64>()).map_err(NetError::from)?.into_data();
    Ok(Explanation {
        heatmap: finish_map(w, h, &coarse, width, height),
        layer,
        target_class,
        probabilities,
    })
}

pub fn gradcam<T: Float>(
    network: &Network<T>,
    input: &Tensor<T>,
    target_class: usize,
    layer: Option<&str>,
) -> Result<HeatMap> {
    explain(network, input, target_class, layer).map(|e| e.heatmap)
}

/// Piecewise-linear blue (0) to green (0.5) to red (1), as 0-255 floats.
///
/// `t <= 0.5`: `(0, 510 t, 255 - 510 t)`; `t > 0.5`: `(510 t - 255, 510 - 510 t, 0)`.
pub fn colormap(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    if t <= 0.5 {
        [0.0, 510.0 * t, 255.0 - 510.0 * t]
    } else {
        [510.0 * t - 255.0, 510.0 - 510.0 * t, 0.0]
    }
}

/// `(1 - alpha) * pixel + alpha * colormap(heat)`, rounded half away from
/// zero and clamped.
pub fn overlay(heatmap: &HeatMap, original: &ImageRgb, alpha: f64) -> Result<ImageRgb> {
    if (heatmap.width, heatmap.height) != (original.width(), original.height()) {
        return Err(GradCamError::Dimension(format!(
            "heatmap is {}x{} but image is {}x{}",
            heatmap.width,
            heatmap.height,
            original.width(),
            original.height()
        )));
    }
    let alpha = alpha.clamp(0.0, 1.0);
    Ok(ImageRgb::from_fn(original.width(), original.height(), |x, y| {
        let px = original.get(x, y);
        let c = colormap(heatmap.get(x, y));
        let mut out = [0u8; 3];
        for i in 0..3 {
            let v = (1.0 - alpha) * px[i] as f64 + alpha * c[i];
            out[i] = v.clamp(0.0, 255.0).round() as u8;
        }
        out
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colormap_anchors() {
        assert_eq!(colormap(0.0), [0.0, 0.0, 255.0]);
        assert_eq!(colormap(0.5), [0.0, 255.0, 0.0]);
        assert_eq!(colormap(1.0), [255.0, 0.0, 0.0]);
        assert_eq!(colormap(0.25), [0.0, 127.5, 127.5]);
    }

    #[test]
    fn relu_kills_negative_weights() {
        let a = Tensor::<f64>::full(&[2, 2, 2], 3.0);
        let g = Tensor::<f64>::full(&[2, 2, 2], -1.0);
        let (w, h, m) = weighted_activation(&a, &g).unwrap();
        let hm = finish_map(w, h, &m, 4, 4);
        assert!(hm.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn overlay_mismatch() {
        let hm = finish_map(1, 1, &[1.0], 2, 2);
        assert!(matches!(
            overlay(&hm, &ImageRgb::filled(3, 2, [0; 3]), 0.4),
            Err(GradCamError::Dimension(_))
        ));
    }
}
