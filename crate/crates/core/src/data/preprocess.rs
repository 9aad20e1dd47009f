use serde::{Deserialize, Serialize};

use crate::tensor::{Float, Tensor};

use super::image::ImageRgb;

/// Longest side produced by the ingestion resize.
pub const DEFAULT_MAX_DIM: usize = 300;

/// Bilinear resampling of an interleaved `channels`-plane buffer using
/// half-pixel centers; sample coordinates are clamped to the source edge.
pub fn bilinear_resample(
    src: &[f64],
    width: usize,
    height: usize,
    channels: usize,
    new_width: usize,
    new_height: usize,
) -> Vec<f64> {
    let xs = axis_taps(width, new_width);
    let ys = axis_taps(height, new_height);
    let mut out = Vec::with_capacity(new_width * new_height * channels);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..channels {
                let at = |x: usize, y: usize| src[(y * width + x) * channels + c];
                let top = (1.0 - fx) * at(x0, y0) + fx * at(x1, y0);
                let bottom = (1.0 - fx) * at(x0, y1) + fx * at(x1, y1);
                out.push((1.0 - fy) * top + fy * bottom);
            }
        }
    }
    out
}

fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    let last = (src - 1) as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let i0 = s.floor() as usize;
            (i0, (i0 + 1).min(src - 1), s - i0 as f64)
        })
        .collect()
}

/// Clamp to `[0, 255]`, then round half away from zero.
fn to_u8(v: f64) -> u8 {
    v.clamp(0.0, 255.0).round() as u8
}

fn resize_rgb(img: &ImageRgb, width: usize, height: usize) -> ImageRgb {
    let src: Vec<f64> = img.pixels().iter().map(|&p| p as f64).collect();
    let out = bilinear_resample(&src, img.width(), img.height(), 3, width, height);
    ImageRgb::new(width, height, out.into_iter().map(to_u8).collect()).expect("resampled buffer")
}

/// Downscales so the longer side equals `max_dim`, preserving aspect ratio.
/// Images already within the bound are returned unchanged.
pub fn resize_max_dim(img: &ImageRgb, max_dim: usize) -> ImageRgb {
    let (w, h) = (img.width(), img.height());
    let max_dim = max_dim.max(1);
    if w.max(h) <= max_dim {
        return img.clone();
    }
    let scale = max_dim as f64 / w.max(h) as f64;
    let fit = |d: usize| ((d as f64 * scale).round() as usize).clamp(1, max_dim);
    let (nw, nh) = if w >= h { (max_dim, fit(h)) } else { (fit(w), max_dim) };
    resize_rgb(img, nw, nh)
}

const SHARPEN: [[i32; 3]; 3] = [[0, -1, 0], [-1, 5, -1], [0, -1, 0]];

/// Per-channel 3x3 sharpening with replicated edges, clamped to `[0, 255]`.
pub fn sharpen(img: &ImageRgb) -> ImageRgb {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let px = img.pixels();
    ImageRgb::from_fn(img.width(), img.height(), |x, y| {
        let mut rgb = [0u8; 3];
        for (c, out) in rgb.iter_mut().enumerate() {
            let mut acc = 0i32;
            for (dy, row) in SHARPEN.iter().enumerate() {
                for (dx, &k) in row.iter().enumerate() {
                    if k == 0 {
                        continue;
                    }
                    let sx = (x as isize + dx as isize - 1).clamp(0, w - 1) as usize;
                    let sy = (y as isize + dy as isize - 1).clamp(0, h - 1) as usize;
                    acc += k * px[(sy * img.width() + sx) * 3 + c] as i32;
                }
            }
            *out = acc.clamp(0, 255) as u8;
        }
        rgb
    })
}

/// How pixel values are mapped into network inputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Normalization {
    /// `pixel / 255`.
    #[default]
    UnitRange,
    /// `(pixel / 255 - mean[c]) / std[c]`.
    Standardize { mean: [f64; 3], std: [f64; 3] },
}

/// Bilinear-resizes to `target x target` (aspect ratio not preserved) and
/// lays the image out as a `[3, target, target]` tensor.
pub fn to_tensor<T: Float>(img: &ImageRgb, target: usize, normalization: &Normalization) -> Tensor<T> {
    let target = target.max(1);
    let src: Vec<f64> = img.pixels().iter().map(|&p| p as f64).collect();
    let plane = target * target;
    let resampled = if img.width() == target && img.height() == target {
        src
    } else {
        bilinear_resample(&src, img.width(), img.height(), 3, target, target)
    };
    let mut data = vec![T::zero(); 3 * plane];
    for (i, px) in resampled.chunks_exact(3).enumerate() {
        for c in 0..3 {
            let unit = px[c] / 255.0;
            let v = match normalization {
                Normalization::UnitRange => unit,
                Normalization::Standardize { mean, std } => (unit - mean[c]) / std[c],
            };
            data[c * plane + i] = T::from_f64(v);
        }
    }
    Tensor::new(&[3, target, target], data).expect("3 x target x target")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn landscape_resize_bound() {
        let img = ImageRgb::filled(600, 400, [10, 20, 30]);
        let out = resize_max_dim(&img, 300);
        assert_eq!((out.width(), out.height()), (300, 200));
        assert!(out.pixels().chunks(3).all(|p| p == [10, 20, 30]));
    }

    #[test]
    fn portrait_and_small_images() {
        let out = resize_max_dim(&ImageRgb::filled(100, 1000, [0; 3]), 300);
        assert_eq!((out.width(), out.height()), (30, 300));
        let small = ImageRgb::filled(300, 200, [1, 2, 3]);
        assert_eq!(resize_max_dim(&small, 300), small);
        let sliver = resize_max_dim(&ImageRgb::filled(1000, 1, [0; 3]), 300);
        assert_eq!((sliver.width(), sliver.height()), (300, 1));
    }

    #[test]
    fn checkerboard_to_single_pixel() {
        let img = ImageRgb::from_fn(2, 2, |x, y| if (x + y) % 2 == 0 { [0; 3] } else { [255; 3] });
        let out = resize_max_dim(&img, 1);
        assert_eq!(out.get(0, 0), [128, 128, 128]);
    }

    #[test]
    fn sharpen_hand_cases() {
        let flat = ImageRgb::filled(4, 3, [90, 10, 200]);
        assert_eq!(sharpen(&flat), flat);

        let spot = ImageRgb::from_fn(3, 3, |x, y| if (x, y) == (1, 1) { [20; 3] } else { [10; 3] });
        assert_eq!(sharpen(&spot).get(1, 1), [60, 60, 60]);

        let hole = ImageRgb::from_fn(3, 3, |x, y| if (x, y) == (1, 1) { [0; 3] } else { [255; 3] });
        assert_eq!(sharpen(&hole).get(1, 1), [0, 0, 0]);
    }

    #[test]
    fn tensor_scaling() {
        let black = to_tensor::<f32>(&ImageRgb::filled(5, 7, [0; 3]), 32, &Normalization::UnitRange);
        assert_eq!(black.shape(), &[3, 32, 32]);
        assert!(black.data().iter().all(|&v| v == 0.0));
        let white = to_tensor::<f32>(&ImageRgb::filled(50, 40, [255; 3]), 32, &Normalization::UnitRange);
        assert!(white.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn tensor_without_resampling_is_exact() {
        let img = ImageRgb::from_fn(2, 2, |x, y| [(x * 10 + y) as u8, 100, 255]);
        let t = to_tensor::<f64>(&img, 2, &Normalization::UnitRange);
        for y in 0..2 {
            for x in 0..2 {
                let p = img.get(x, y);
                for c in 0..3 {
                    assert_eq!(t.data()[c * 4 + y * 2 + x], p[c] as f64 / 255.0);
                }
            }
        }
    }

    #[test]
    fn standardization() {
        let img = ImageRgb::filled(2, 2, [255, 0, 51]);
        let norm = Normalization::Standardize {
            mean: [0.5, 0.5, 0.2],
            std: [0.5, 0.25, 1.0],
        };
        let t = to_tensor::<f64>(&img, 2, &norm);
        assert_eq!(t.data()[0], 1.0);
        assert_eq!(t.data()[4], -2.0);
        assert!((t.data()[8] - 0.0).abs() < 1e-12);
    }
}
